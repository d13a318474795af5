#include "uqvol/inference.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include "uqvol/chunking.hpp"

namespace uqvol {

namespace {

double sorted_percentile(const double* sorted, i64 n, double q) {
  const double rank = q / 100.0 * static_cast<double>(n - 1);
  const i64 lo = static_cast<i64>(std::floor(rank));
  const i64 hi = std::min(lo + 1, n - 1);
  const double frac = rank - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

void validate_points(const std::vector<double>& points) {
  if (points.empty()) throw BadConfig("percentile points must be nonempty");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i] <= 0.0 || points[i] >= 100.0)
      throw BadConfig("percentile points must lie in (0, 100)");
    if (i > 0 && points[i] <= points[i - 1])
      throw BadConfig("percentile points must be strictly increasing");
  }
}

struct StitchResult {
  Volume sigmoid;
  std::vector<Volume> point_maps;  // parallel to points
};

StitchResult run_chunked(const BatchSampler& model, const Volume& volume,
                         const InferenceConfig& cfg,
                         const std::vector<double>& points, Rng& rng) {
  if (volume.shape[3] != 1)
    throw BadShape("predict: expected a single-channel volume");
  if (cfg.mc_samples < 1 || cfg.batch_size < 1)
    throw BadConfig("predict: mc_samples and batch_size must be >= 1");
  if (cfg.mc_samples % cfg.batch_size != 0)
    throw IndivisibleSamples("predict: mc_samples must be divisible by batch_size");
  if (cfg.trim_fraction < 0.0 || cfg.trim_fraction >= 0.5)
    throw BadConfig("predict: trim_fraction must be in [0, 0.5)");
  validate_points(points);

  ChunkSpec spec;
  for (int i = 0; i < 3; ++i)
    spec.chunk_size[static_cast<std::size_t>(i)] =
        cfg.chunk_size[static_cast<std::size_t>(i)] > 0
            ? cfg.chunk_size[static_cast<std::size_t>(i)]
            : volume.shape[static_cast<std::size_t>(i)];
  spec.step = cfg.step;
  const ChunkSet cs = chunk(volume, spec);

  const std::array<i64, 3> ts{volume.shape[0], volume.shape[1], volume.shape[2]};
  Volume counts(ts[0], ts[1], ts[2], 1, 0.0);
  Volume sig_sum(ts[0], ts[1], ts[2], 1, 0.0);
  std::vector<Volume> point_sums(points.size(), Volume(ts[0], ts[1], ts[2], 1, 0.0));

  const i64 chunk_voxels = spec.chunk_size[0] * spec.chunk_size[1] * spec.chunk_size[2];
  const i64 n_batches = cfg.mc_samples / cfg.batch_size;
  std::vector<std::vector<double>> samples(
      static_cast<std::size_t>(cfg.mc_samples),
      std::vector<double>(static_cast<std::size_t>(chunk_voxels)));
  std::vector<double> column(static_cast<std::size_t>(cfg.mc_samples));

  for (std::size_t ci = 0; ci < cs.chunks.size(); ++ci) {
    const Volume& ck = cs.chunks[ci];
    // Batch of identical chunk copies; per-example noise decorrelates them.
    Tensor batch({cfg.batch_size, ck.shape[0], ck.shape[1], ck.shape[2], 1});
    for (i64 b = 0; b < cfg.batch_size; ++b)
      std::memcpy(batch.data.data() + b * chunk_voxels, ck.data.data(),
                  static_cast<std::size_t>(chunk_voxels) * sizeof(double));

    for (i64 j = 0; j < n_batches; ++j) {
      Rng draw_rng = rng.split((static_cast<std::uint64_t>(ci) << 32) |
                               static_cast<std::uint64_t>(j));
      const Tensor out = model(batch, draw_rng);
      if (out.shape != batch.shape)
        throw BadShape("predict: model output shape must match its input");
      for (i64 b = 0; b < cfg.batch_size; ++b)
        std::memcpy(samples[static_cast<std::size_t>(j * cfg.batch_size + b)].data(),
                    out.data.data() + b * chunk_voxels,
                    static_cast<std::size_t>(chunk_voxels) * sizeof(double));
    }

    const TrimBox box = trim_chunk(cs.coords[ci], spec.chunk_size, ts,
                                   cfg.trim_fraction);
    for (i64 a = 0; a < box.size[0]; ++a) {
      for (i64 b = 0; b < box.size[1]; ++b) {
        for (i64 c = 0; c < box.size[2]; ++c) {
          const i64 local = ((box.offset[0] + a) * spec.chunk_size[1] +
                             (box.offset[1] + b)) * spec.chunk_size[2] +
                            (box.offset[2] + c);
          for (i64 s = 0; s < cfg.mc_samples; ++s)
            column[static_cast<std::size_t>(s)] =
                samples[static_cast<std::size_t>(s)][static_cast<std::size_t>(local)];
          double mean = 0.0;
          for (double v : column) mean += v;
          mean /= static_cast<double>(cfg.mc_samples);
          std::sort(column.begin(), column.end());

          const i64 gi = counts.index(box.coord[0] + a, box.coord[1] + b,
                                      box.coord[2] + c, 0);
          counts.data[static_cast<std::size_t>(gi)] += 1.0;
          sig_sum.data[static_cast<std::size_t>(gi)] += mean;
          for (std::size_t p = 0; p < points.size(); ++p)
            point_sums[p].data[static_cast<std::size_t>(gi)] += sorted_percentile(
                column.data(), cfg.mc_samples, points[p]);
        }
      }
    }
  }

  for (i64 i = 0; i < counts.size(); ++i) {
    if (counts.data[static_cast<std::size_t>(i)] == 0.0)
      throw BadConfig(
          "predict: trimming left voxels with zero coverage; increase overlap "
          "(step >= 2) or set trim_fraction to 0");
  }

  StitchResult r;
  r.sigmoid = std::move(sig_sum);
  for (i64 i = 0; i < r.sigmoid.size(); ++i)
    r.sigmoid.data[static_cast<std::size_t>(i)] /=
        counts.data[static_cast<std::size_t>(i)];
  r.point_maps = std::move(point_sums);
  for (auto& pm : r.point_maps)
    for (i64 i = 0; i < pm.size(); ++i)
      pm.data[static_cast<std::size_t>(i)] /= counts.data[static_cast<std::size_t>(i)];
  return r;
}

}  // namespace

double percentile(std::vector<double> samples, double q) {
  if (samples.empty()) throw EmptySamples("percentile: no samples");
  std::sort(samples.begin(), samples.end());
  return sorted_percentile(samples.data(), static_cast<i64>(samples.size()), q);
}

TrimBox trim_chunk(const std::array<i64, 3>& coord,
                   const std::array<i64, 3>& chunk_shape,
                   const std::array<i64, 3>& test_shape, double trim_fraction) {
  TrimBox box;
  box.coord = coord;
  box.size = chunk_shape;
  for (std::size_t i = 0; i < 3; ++i) {
    const i64 border = static_cast<i64>(
        std::ceil(static_cast<double>(chunk_shape[i]) * trim_fraction));
    const bool leading_interior = coord[i] != 0;
    const bool trailing_interior = coord[i] != test_shape[i] - chunk_shape[i];
    if (leading_interior && trailing_interior) {
      box.offset[i] = border;
      box.coord[i] = coord[i] + border;
      box.size[i] = chunk_shape[i] - 2 * border;
    } else if (leading_interior) {
      box.offset[i] = border;
      box.coord[i] = coord[i] + border;
      box.size[i] = chunk_shape[i] - border;
    } else if (trailing_interior) {
      box.size[i] = chunk_shape[i] - border;
    }
  }
  return box;
}

UncertaintyBundle predict(const BatchSampler& model, const Volume& volume,
                          const InferenceConfig& cfg, Rng& rng) {
  StitchResult sr = run_chunked(model, volume, cfg, cfg.percentile_points, rng);

  UncertaintyBundle b;
  b.sigmoid = std::move(sr.sigmoid);
  for (std::size_t p = 0; p < cfg.percentile_points.size(); ++p)
    b.percentiles.emplace_back(cfg.percentile_points[p], std::move(sr.point_maps[p]));

  b.pred = LabelVolume(volume.shape[0], volume.shape[1], volume.shape[2]);
  for (i64 i = 0; i < b.sigmoid.size(); ++i)
    b.pred.data[static_cast<std::size_t>(i)] =
        b.sigmoid.data[static_cast<std::size_t>(i)] > 0.5 ? 1 : 0;

  const Volume& lo = b.percentiles.front().second;
  const Volume& hi = b.percentiles.back().second;
  b.unc = Volume(volume.shape[0], volume.shape[1], volume.shape[2], 1, 0.0);
  for (i64 i = 0; i < b.unc.size(); ++i)
    b.unc.data[static_cast<std::size_t>(i)] =
        hi.data[static_cast<std::size_t>(i)] - lo.data[static_cast<std::size_t>(i)];
  return b;
}

std::vector<Volume> probe_intervals(
    const BatchSampler& model, const Volume& volume, const InferenceConfig& cfg,
    const std::vector<std::pair<double, double>>& intervals, Rng& rng) {
  if (intervals.empty()) throw BadConfig("probe_intervals: no intervals");
  std::set<double> point_set;
  for (const auto& [lo, hi] : intervals) {
    if (lo >= hi) throw BadConfig("probe_intervals: interval bounds must increase");
    point_set.insert(lo);
    point_set.insert(hi);
  }
  const std::vector<double> points(point_set.begin(), point_set.end());
  StitchResult sr = run_chunked(model, volume, cfg, points, rng);

  std::map<double, const Volume*> by_point;
  for (std::size_t p = 0; p < points.size(); ++p)
    by_point[points[p]] = &sr.point_maps[p];

  std::vector<Volume> uncs;
  for (const auto& [lo, hi] : intervals) {
    const Volume& vlo = *by_point.at(lo);
    const Volume& vhi = *by_point.at(hi);
    Volume u(volume.shape[0], volume.shape[1], volume.shape[2], 1, 0.0);
    for (i64 i = 0; i < u.size(); ++i)
      u.data[static_cast<std::size_t>(i)] =
          vhi.data[static_cast<std::size_t>(i)] - vlo.data[static_cast<std::size_t>(i)];
    uncs.push_back(std::move(u));
  }
  return uncs;
}

}  // namespace uqvol
