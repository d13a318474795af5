#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "uqvol/errors.hpp"

namespace uqvol {

using i64 = std::int64_t;

/// Dense voxel grid with shape (depth, height, width, channels), row-major
/// with channels minor. Values are doubles in memory, float32 on disk.
struct Volume {
  std::array<i64, 4> shape{0, 0, 0, 0};
  std::vector<double> data;

  Volume() = default;
  Volume(i64 d, i64 h, i64 w, i64 c, double fill = 0.0);

  i64 size() const { return shape[0] * shape[1] * shape[2] * shape[3]; }
  i64 index(i64 d, i64 h, i64 w, i64 c) const {
    return ((d * shape[1] + h) * shape[2] + w) * shape[3] + c;
  }
  double& at(i64 d, i64 h, i64 w, i64 c) { return data[index(d, h, w, c)]; }
  double at(i64 d, i64 h, i64 w, i64 c) const { return data[index(d, h, w, c)]; }
};

/// Binary segmentation target with shape (depth, height, width).
struct LabelVolume {
  std::array<i64, 3> shape{0, 0, 0};
  std::vector<std::uint8_t> data;

  LabelVolume() = default;
  LabelVolume(i64 d, i64 h, i64 w, std::uint8_t fill = 0);

  i64 size() const { return shape[0] * shape[1] * shape[2]; }
  i64 index(i64 d, i64 h, i64 w) const { return (d * shape[1] + h) * shape[2] + w; }
  std::uint8_t& at(i64 d, i64 h, i64 w) { return data[index(d, h, w)]; }
  std::uint8_t at(i64 d, i64 h, i64 w) const { return data[index(d, h, w)]; }
};

/// Mean and population variance over all voxels.
struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};
Moments moments(const Volume& v);

/// Shift/scale all voxels to zero mean and unit population variance.
/// Throws ConstantVolume when every voxel is equal.
Volume normalize(const Volume& v);

/// Fraction of voxels where pred equals target. Throws ShapeMismatch.
double voxel_accuracy(const LabelVolume& pred, const LabelVolume& target);

}  // namespace uqvol
