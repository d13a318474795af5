#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "uqvol/rng.hpp"
#include "uqvol/volume.hpp"

namespace uqvol {

enum class BodyKind { sphere, slab_with_void };

/// Synthetic scan generator settings: geometric bodies rasterized into a
/// label mask, then blurred and corrupted with Gaussian noise to form the
/// scan, which is normalized to zero mean / unit variance.
struct SynthSpec {
  std::array<i64, 3> shape{32, 32, 32};
  int n_bodies = 2;
  BodyKind kind = BodyKind::sphere;
  double noise_sigma = 0.3;
  double blur_sigma = 1.0;
  std::uint64_t seed = 0;
};

/// Rasterize a solid sphere (voxel centers within radius) into the label.
/// Throws BodyDoesNotFit when the sphere extends outside the volume.
void add_sphere(LabelVolume& label, const std::array<double, 3>& center,
                double radius);

/// Material slab spanning depth [z_lo, z_hi] with a spherical void removed.
void add_slab_with_void(LabelVolume& label, i64 z_lo, i64 z_hi,
                        const std::array<double, 3>& void_center,
                        double void_radius);

/// Blur the mask, add voxel noise, and normalize.
Volume render_scan(const LabelVolume& label, double blur_sigma, double noise_sigma,
                   Rng& rng);

/// count reproducible (scan, label) pairs; pair i is a pure function of
/// (spec.seed, i).
std::vector<std::pair<Volume, LabelVolume>> synth_dataset(const SynthSpec& spec,
                                                          int count);

}  // namespace uqvol
