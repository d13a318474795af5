#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "uqvol/errors.hpp"
#include "uqvol/volume.hpp"

namespace uqvol {

/// Dense n-d array (up to 5 axes), row-major. Activations use the axis
/// convention [batch, depth, height, width, channels]; convolution kernels
/// use [kd, kh, kw, c_in, c_out].
struct Tensor {
  std::vector<i64> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<i64> s, double fill = 0.0);

  static Tensor zeros(std::vector<i64> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<i64> s, double v) { return Tensor(std::move(s), v); }

  i64 size() const;
  i64 dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  double& operator[](i64 i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](i64 i) const { return data[static_cast<std::size_t>(i)]; }

  /// Flat index for a rank-5 tensor.
  i64 index5(i64 a, i64 b, i64 c, i64 d, i64 e) const {
    return (((a * shape[1] + b) * shape[2] + c) * shape[3] + d) * shape[4] + e;
  }
};

i64 numel(const std::vector<i64>& shape);

/// Batch-of-one tensor view of a volume: [1, d, h, w, c].
Tensor tensor_from_volume(const Volume& v);
/// Stack volumes of identical shape along the batch axis.
Tensor tensor_from_volumes(const std::vector<const Volume*>& vs);
/// Extract batch element b of a rank-5 tensor as a volume.
Volume volume_from_tensor(const Tensor& t, i64 b = 0);

/// Gradient bundle returned by layer backward passes: the gradient w.r.t.
/// the layer input plus named gradients for each parameter.
struct LayerGrads {
  Tensor input_grad;
  std::map<std::string, Tensor> param_grads;
};

}  // namespace uqvol
