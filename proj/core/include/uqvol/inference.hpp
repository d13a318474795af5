#pragma once

#include <array>
#include <functional>
#include <utility>
#include <vector>

#include "uqvol/rng.hpp"
#include "uqvol/tensor.hpp"
#include "uqvol/volume.hpp"

namespace uqvol {

/// Chunked Monte Carlo prediction settings. chunk_size axes of 0 default to
/// the full volume extent (single chunk). mc_samples must be divisible by
/// batch_size.
struct InferenceConfig {
  std::array<i64, 3> chunk_size{0, 0, 0};
  int step = 3;
  int mc_samples = 48;
  int batch_size = 8;
  std::vector<double> percentile_points{33.0, 67.0};
  double trim_fraction = 0.10;
};

/// Stitched prediction products: the mean sigmoid map, one volume per
/// percentile point, the thresholded binary prediction (sigmoid > 0.5), and
/// the uncertainty map (highest minus lowest percentile volume).
struct UncertaintyBundle {
  Volume sigmoid;
  std::vector<std::pair<double, Volume>> percentiles;
  LabelVolume pred;
  Volume unc;
};

/// Linear-interpolation percentile over samples (rank = q/100 * (n-1)).
/// Throws EmptySamples.
double percentile(std::vector<double> samples, double q);

/// Trim geometry for one chunk: leading offsets, trimmed extents, and the
/// adjusted origin. A face is trimmed only when it does not lie on the
/// volume boundary; border = ceil(chunk_shape[i] * trim_fraction).
struct TrimBox {
  std::array<i64, 3> offset{0, 0, 0};
  std::array<i64, 3> size{0, 0, 0};
  std::array<i64, 3> coord{0, 0, 0};
};

TrimBox trim_chunk(const std::array<i64, 3>& coord,
                   const std::array<i64, 3>& chunk_shape,
                   const std::array<i64, 3>& test_shape, double trim_fraction);

/// One stochastic forward over a batch of identical chunks; returns the
/// per-example sigmoid maps. Supplied by model::make_sampler in production
/// and by stubs in tests.
using BatchSampler = std::function<Tensor(const Tensor&, Rng&)>;

/// Chunk the volume, run mc_samples stochastic forwards per chunk, trim
/// chunk borders, stitch sums through a per-voxel counts accumulator, and
/// derive the bundle. The input volume is expected to be normalized.
UncertaintyBundle predict(const BatchSampler& model, const Volume& volume,
                          const InferenceConfig& cfg, Rng& rng);

/// One uncertainty map per (low, high) percentile interval, all computed
/// from the same Monte Carlo samples. Wider intervals dominate narrower
/// ones elementwise.
std::vector<Volume> probe_intervals(
    const BatchSampler& model, const Volume& volume, const InferenceConfig& cfg,
    const std::vector<std::pair<double, double>>& intervals, Rng& rng);

}  // namespace uqvol
