#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "uqvol/rng.hpp"
#include "uqvol/tensor.hpp"

namespace uqvol {

// ---------------------------------------------------------------------------
// 3-d convolution, stride 1, "same" zero padding.
// x: [B, D, H, W, Ci], kernel: [kd, kh, kw, Ci, Co] with odd kd/kh/kw,
// bias: [Co] (empty means no bias). Output: [B, D, H, W, Co].
// ---------------------------------------------------------------------------
Tensor conv3d_forward(const Tensor& x, const Tensor& kernel,
                      const std::vector<double>& bias);

/// Gradients of sum(upstream * forward(x)) w.r.t. x ("input"), kernel and
/// bias ("kernel", "bias" in param_grads).
LayerGrads conv3d_backward(const Tensor& x, const Tensor& kernel,
                           const Tensor& upstream);

// ---------------------------------------------------------------------------
// Group normalization over (depth, height, width, channels-in-group) per
// example. gamma/beta are per-channel. Throws IndivisibleChannels.
// ---------------------------------------------------------------------------
struct GroupNormCache {
  std::vector<double> mean;     // [B * groups]
  std::vector<double> inv_std;  // [B * groups]
};

Tensor group_norm_forward(const Tensor& x, int groups,
                          const std::vector<double>& gamma,
                          const std::vector<double>& beta, double eps,
                          GroupNormCache* cache = nullptr);

LayerGrads group_norm_backward(const Tensor& x, int groups,
                               const std::vector<double>& gamma,
                               const GroupNormCache& cache,
                               const Tensor& upstream);

// ---------------------------------------------------------------------------
// 2x2x2 max pooling; spatial dims must be even. Ties break to the first
// element in scan order. argmax holds flat input indices per output element.
// ---------------------------------------------------------------------------
struct MaxPoolResult {
  Tensor y;
  std::vector<i64> argmax;
};

MaxPoolResult max_pool_forward(const Tensor& x);
Tensor max_pool_backward(const std::vector<i64>& argmax,
                         const std::vector<i64>& input_shape,
                         const Tensor& upstream);

// Nearest-neighbor 2x upsampling; backward sums each 2x2x2 window.
Tensor upsample_nn_forward(const Tensor& x);
Tensor upsample_nn_backward(const Tensor& upstream);

// Channel concatenation (a first) and its backward split.
Tensor concat_channels(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_channels(const Tensor& g, i64 a_channels);

// Elementwise logistic; backward takes the forward output y.
Tensor sigmoid_forward(const Tensor& x);
Tensor sigmoid_backward(const Tensor& y, const Tensor& upstream);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& upstream);

// ---------------------------------------------------------------------------
// Spatial dropout: whole channels zeroed per example, survivors scaled by
// 1/(1-rate). The mask is drawn separately so a frozen mask can be replayed
// through forward and backward. Stays active at inference when sampling.
// ---------------------------------------------------------------------------
struct DropoutMask {
  std::vector<std::uint8_t> keep;  // [B * C]
  double scale = 1.0;
};

DropoutMask draw_dropout_mask(i64 batch, i64 channels, double rate, Rng& rng);
Tensor spatial_dropout_forward(const Tensor& x, const DropoutMask& mask);
Tensor spatial_dropout_backward(const DropoutMask& mask, const Tensor& upstream);

/// Convenience wrapper: draw a fresh mask and apply it.
Tensor spatial_dropout(const Tensor& x, double rate, Rng& rng);

}  // namespace uqvol
