#include "uqvol/volume.hpp"

#include <cmath>
#include <string>

namespace uqvol {

namespace {

void check_shape4(const std::array<i64, 4>& s) {
  for (i64 v : s) {
    if (v < 1) throw BadShape("volume axes must all be >= 1");
  }
}

}  // namespace

Volume::Volume(i64 d, i64 h, i64 w, i64 c, double fill) : shape{d, h, w, c} {
  check_shape4(shape);
  data.assign(static_cast<std::size_t>(size()), fill);
}

LabelVolume::LabelVolume(i64 d, i64 h, i64 w, std::uint8_t fill) : shape{d, h, w} {
  for (i64 v : shape) {
    if (v < 1) throw BadShape("label volume axes must all be >= 1");
  }
  if (fill > 1) throw BadShape("labels must be 0 or 1");
  data.assign(static_cast<std::size_t>(size()), fill);
}

Moments moments(const Volume& v) {
  const i64 n = v.size();
  double sum = 0.0;
  for (double x : v.data) sum += x;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double x : v.data) {
    const double d = x - mean;
    ss += d * d;
  }
  return {mean, ss / static_cast<double>(n)};
}

Volume normalize(const Volume& v) {
  double lo = v.data[0], hi = v.data[0];
  for (double x : v.data) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (lo == hi) throw ConstantVolume("cannot normalize a constant volume");
  const Moments m = moments(v);
  const double inv = 1.0 / std::sqrt(m.variance);
  Volume out = v;
  for (double& x : out.data) x = (x - m.mean) * inv;
  return out;
}

double voxel_accuracy(const LabelVolume& pred, const LabelVolume& target) {
  if (pred.shape != target.shape)
    throw ShapeMismatch("voxel_accuracy: label shapes differ");
  i64 same = 0;
  for (i64 i = 0; i < pred.size(); ++i) {
    if (pred.data[static_cast<std::size_t>(i)] == target.data[static_cast<std::size_t>(i)]) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(pred.size());
}

}  // namespace uqvol
