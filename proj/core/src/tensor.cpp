#include "uqvol/tensor.hpp"

#include <cstring>

namespace uqvol {

i64 numel(const std::vector<i64>& shape) {
  i64 n = 1;
  for (i64 s : shape) n *= s;
  return n;
}

Tensor::Tensor(std::vector<i64> s, double fill) : shape(std::move(s)) {
  if (shape.empty() || shape.size() > 5)
    throw BadShape("tensor rank must be between 1 and 5");
  for (i64 v : shape) {
    if (v < 0) throw BadShape("tensor axes must be >= 0");
  }
  data.assign(static_cast<std::size_t>(numel(shape)), fill);
}

i64 Tensor::size() const { return numel(shape); }

Tensor tensor_from_volume(const Volume& v) {
  Tensor t({1, v.shape[0], v.shape[1], v.shape[2], v.shape[3]});
  t.data = v.data;
  return t;
}

Tensor tensor_from_volumes(const std::vector<const Volume*>& vs) {
  if (vs.empty()) throw EmptyDataset("tensor_from_volumes: no volumes");
  const auto& s = vs.front()->shape;
  for (const Volume* v : vs) {
    if (v->shape != s) throw ShapeMismatch("tensor_from_volumes: shapes differ");
  }
  Tensor t({static_cast<i64>(vs.size()), s[0], s[1], s[2], s[3]});
  const i64 per = numel({s[0], s[1], s[2], s[3]});
  for (std::size_t b = 0; b < vs.size(); ++b) {
    std::memcpy(t.data.data() + static_cast<std::size_t>(per) * b, vs[b]->data.data(),
                static_cast<std::size_t>(per) * sizeof(double));
  }
  return t;
}

Volume volume_from_tensor(const Tensor& t, i64 b) {
  if (t.rank() != 5) throw BadShape("volume_from_tensor: expected rank-5 tensor");
  if (b < 0 || b >= t.dim(0)) throw BadShape("volume_from_tensor: batch index");
  Volume v(t.dim(1), t.dim(2), t.dim(3), t.dim(4));
  const i64 per = v.size();
  std::memcpy(v.data.data(), t.data.data() + static_cast<std::size_t>(per * b),
              static_cast<std::size_t>(per) * sizeof(double));
  return v;
}

}  // namespace uqvol
