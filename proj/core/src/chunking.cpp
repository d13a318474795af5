#include "uqvol/chunking.hpp"

#include <cstring>
#include <string>

namespace uqvol {

namespace {

void validate(const ChunkSpec& spec) {
  if (spec.step < 1) throw BadConfig("chunk step must be >= 1");
  for (i64 c : spec.chunk_size) {
    if (c < 1) throw BadConfig("chunk size axes must all be >= 1");
    if (c < spec.step) throw BadConfig("chunk size must be >= step on every axis");
  }
}

Volume copy_subvolume(const Volume& v, const std::array<i64, 3>& origin,
                      const std::array<i64, 3>& extent) {
  Volume out(extent[0], extent[1], extent[2], v.shape[3]);
  const i64 row = extent[2] * v.shape[3];
  for (i64 d = 0; d < extent[0]; ++d) {
    for (i64 h = 0; h < extent[1]; ++h) {
      const double* src = &v.data[static_cast<std::size_t>(
          v.index(origin[0] + d, origin[1] + h, origin[2], 0))];
      double* dst = &out.data[static_cast<std::size_t>(out.index(d, h, 0, 0))];
      std::memcpy(dst, src, static_cast<std::size_t>(row) * sizeof(double));
    }
  }
  return out;
}

}  // namespace

ChunkSet chunk(const Volume& v, const ChunkSpec& spec) {
  validate(spec);
  const auto& cs = spec.chunk_size;
  const i64 z_max = v.shape[0] - cs[0];
  const i64 x_max = v.shape[1] - cs[1];
  const i64 y_max = v.shape[2] - cs[2];
  if (z_max < 0 || x_max < 0 || y_max < 0)
    throw VolumeTooSmall("volume too small for given chunk size");

  const i64 sz = cs[0] / spec.step;
  const i64 sx = cs[1] / spec.step;
  const i64 sy = cs[2] / spec.step;

  ChunkSet out;
  out.original_shape = v.shape;

  // Mirrors the reference loop nest: a clamped final offset sets the axis
  // flag so the next iteration breaks, and the modulo test skips the clamp
  // when the final offset was already visited.
  bool z_flag = false, x_flag = false, y_flag = false;
  for (i64 zi = 0; zi < v.shape[0]; zi += sz) {
    i64 z = zi;
    x_flag = false;
    y_flag = false;
    if (z_flag) break;
    if (z > z_max) {
      if (z_max == 0 || z_max % sz == 0) break;
      z = z_max;
      z_flag = true;
    }
    for (i64 xi = 0; xi < v.shape[1]; xi += sx) {
      i64 x = xi;
      y_flag = false;
      if (x_flag) break;
      if (x > x_max) {
        if (x_max == 0 || x_max % sx == 0) break;
        x = x_max;
        x_flag = true;
      }
      for (i64 yi = 0; yi < v.shape[2]; yi += sy) {
        i64 y = yi;
        if (y_flag) break;
        if (y > y_max) {
          if (y_max == 0 || y_max % sy == 0) break;
          y = y_max;
          y_flag = true;
        }
        out.coords.push_back({z, x, y});
        out.chunks.push_back(copy_subvolume(v, {z, x, y}, cs));
      }
    }
  }
  return out;
}

Volume coverage_counts(const ChunkSet& cs) {
  if (cs.chunks.empty()) throw BadConfig("coverage_counts: empty chunk set");
  const auto& os = cs.original_shape;
  Volume counts(os[0], os[1], os[2], 1, 0.0);
  const auto& ext = cs.chunks.front().shape;
  for (const auto& c : cs.coords) {
    for (i64 d = 0; d < ext[0]; ++d)
      for (i64 h = 0; h < ext[1]; ++h)
        for (i64 w = 0; w < ext[2]; ++w)
          counts.at(c[0] + d, c[1] + h, c[2] + w, 0) += 1.0;
  }
  return counts;
}

}  // namespace uqvol
