#include "uqvol/synth.hpp"

#include <algorithm>
#include <cmath>

namespace uqvol {

namespace {

// Separable Gaussian blur with border-renormalized taps, so constant regions
// stay constant at the edges.
Volume gaussian_blur(const Volume& v, double sigma) {
  if (sigma <= 0.0) return v;
  const i64 radius = static_cast<i64>(std::ceil(3.0 * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  for (i64 i = -radius; i <= radius; ++i)
    taps[static_cast<std::size_t>(i + radius)] =
        std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));

  Volume cur = v;
  for (int axis = 0; axis < 3; ++axis) {
    Volume next = cur;
    const std::array<i64, 4>& s = cur.shape;
    for (i64 d = 0; d < s[0]; ++d)
      for (i64 h = 0; h < s[1]; ++h)
        for (i64 w = 0; w < s[2]; ++w) {
          double acc = 0.0, wsum = 0.0;
          for (i64 t = -radius; t <= radius; ++t) {
            i64 p[3] = {d, h, w};
            p[axis] += t;
            if (p[0] < 0 || p[0] >= s[0] || p[1] < 0 || p[1] >= s[1] || p[2] < 0 ||
                p[2] >= s[2])
              continue;
            const double wt = taps[static_cast<std::size_t>(t + radius)];
            acc += wt * cur.at(p[0], p[1], p[2], 0);
            wsum += wt;
          }
          next.at(d, h, w, 0) = acc / wsum;
        }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace

void add_sphere(LabelVolume& label, const std::array<double, 3>& center,
                double radius) {
  if (radius <= 0.0) throw BodyDoesNotFit("sphere radius must be positive");
  for (std::size_t i = 0; i < 3; ++i) {
    if (center[i] - radius < 0.0 ||
        center[i] + radius > static_cast<double>(label.shape[i] - 1))
      throw BodyDoesNotFit("sphere extends outside the volume");
  }
  const double r2 = radius * radius;
  for (i64 d = 0; d < label.shape[0]; ++d)
    for (i64 h = 0; h < label.shape[1]; ++h)
      for (i64 w = 0; w < label.shape[2]; ++w) {
        const double dz = static_cast<double>(d) - center[0];
        const double dy = static_cast<double>(h) - center[1];
        const double dx = static_cast<double>(w) - center[2];
        if (dz * dz + dy * dy + dx * dx <= r2) label.at(d, h, w) = 1;
      }
}

void add_slab_with_void(LabelVolume& label, i64 z_lo, i64 z_hi,
                        const std::array<double, 3>& void_center,
                        double void_radius) {
  if (z_lo < 0 || z_hi >= label.shape[0] || z_lo > z_hi)
    throw BodyDoesNotFit("slab depth range is out of bounds");
  if (void_radius <= 0.0) throw BodyDoesNotFit("void radius must be positive");
  if (void_center[0] - void_radius < static_cast<double>(z_lo) ||
      void_center[0] + void_radius > static_cast<double>(z_hi))
    throw BodyDoesNotFit("void extends outside the slab");
  for (std::size_t i = 1; i < 3; ++i) {
    if (void_center[i] - void_radius < 0.0 ||
        void_center[i] + void_radius > static_cast<double>(label.shape[i] - 1))
      throw BodyDoesNotFit("void extends outside the volume");
  }
  for (i64 d = z_lo; d <= z_hi; ++d)
    for (i64 h = 0; h < label.shape[1]; ++h)
      for (i64 w = 0; w < label.shape[2]; ++w) label.at(d, h, w) = 1;
  const double r2 = void_radius * void_radius;
  for (i64 d = z_lo; d <= z_hi; ++d)
    for (i64 h = 0; h < label.shape[1]; ++h)
      for (i64 w = 0; w < label.shape[2]; ++w) {
        const double dz = static_cast<double>(d) - void_center[0];
        const double dy = static_cast<double>(h) - void_center[1];
        const double dx = static_cast<double>(w) - void_center[2];
        if (dz * dz + dy * dy + dx * dx <= r2) label.at(d, h, w) = 0;
      }
}

Volume render_scan(const LabelVolume& label, double blur_sigma, double noise_sigma,
                   Rng& rng) {
  if (noise_sigma < 0.0) throw BadConfig("noise_sigma must be >= 0");
  Volume raw(label.shape[0], label.shape[1], label.shape[2], 1);
  for (i64 i = 0; i < label.size(); ++i)
    raw.data[static_cast<std::size_t>(i)] =
        static_cast<double>(label.data[static_cast<std::size_t>(i)]);
  Volume scan = gaussian_blur(raw, blur_sigma);
  if (noise_sigma > 0.0) {
    for (double& x : scan.data) x += noise_sigma * rng.normal();
  }
  return normalize(scan);
}

std::vector<std::pair<Volume, LabelVolume>> synth_dataset(const SynthSpec& spec,
                                                          int count) {
  if (count < 1) throw BadConfig("synth_dataset: count must be >= 1");
  if (spec.n_bodies < 1) throw BadConfig("synth_dataset: n_bodies must be >= 1");
  const i64 min_dim = std::min({spec.shape[0], spec.shape[1], spec.shape[2]});
  if (min_dim < 8) throw BadConfig("synth_dataset: shape axes must be >= 8");

  std::vector<std::pair<Volume, LabelVolume>> out;
  out.reserve(static_cast<std::size_t>(count));
  const Rng root(spec.seed);
  for (int i = 0; i < count; ++i) {
    Rng rng = root.split(static_cast<std::uint64_t>(i));
    LabelVolume label(spec.shape[0], spec.shape[1], spec.shape[2]);

    if (spec.kind == BodyKind::sphere) {
      for (int b = 0; b < spec.n_bodies; ++b) {
        const double r =
            rng.uniform(static_cast<double>(min_dim) / 8.0,
                        static_cast<double>(min_dim) / 5.0);
        std::array<double, 3> c{};
        for (std::size_t a = 0; a < 3; ++a)
          c[a] = rng.uniform(r, static_cast<double>(spec.shape[a] - 1) - r);
        add_sphere(label, c, r);
      }
    } else {
      const i64 d = spec.shape[0];
      const i64 z_lo = static_cast<i64>(rng.uniform(static_cast<double>(d) / 6.0,
                                                    static_cast<double>(d) / 3.0));
      const i64 z_hi = static_cast<i64>(rng.uniform(2.0 * static_cast<double>(d) / 3.0,
                                                    5.0 * static_cast<double>(d) / 6.0));
      const double thickness = static_cast<double>(z_hi - z_lo);
      for (int b = 0; b < spec.n_bodies; ++b) {
        const double rmax =
            std::min(thickness / 2.0 - 1.0, static_cast<double>(min_dim) / 8.0);
        const double r = rng.uniform(std::min(2.0, rmax), rmax);
        std::array<double, 3> c{};
        c[0] = rng.uniform(static_cast<double>(z_lo) + r, static_cast<double>(z_hi) - r);
        for (std::size_t a = 1; a < 3; ++a)
          c[a] = rng.uniform(r, static_cast<double>(spec.shape[a] - 1) - r);
        if (b == 0) {
          add_slab_with_void(label, z_lo, z_hi, c, r);
        } else {
          // Carve additional voids out of the already painted slab.
          const double r2 = r * r;
          for (i64 dz = z_lo; dz <= z_hi; ++dz)
            for (i64 h = 0; h < spec.shape[1]; ++h)
              for (i64 w = 0; w < spec.shape[2]; ++w) {
                const double a0 = static_cast<double>(dz) - c[0];
                const double a1 = static_cast<double>(h) - c[1];
                const double a2 = static_cast<double>(w) - c[2];
                if (a0 * a0 + a1 * a1 + a2 * a2 <= r2) label.at(dz, h, w) = 0;
              }
        }
      }
    }
    Rng noise_rng = rng.split(0x90153ull);
    Volume scan = render_scan(label, spec.blur_sigma, spec.noise_sigma, noise_rng);
    out.emplace_back(std::move(scan), std::move(label));
  }
  return out;
}

}  // namespace uqvol
