#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "uqvol/volume.hpp"

namespace uqvol {

/// Sliding-patch evaluation settings. A patch is accurate when its mean
/// voxel accuracy is >= accuracy_threshold (inclusive) and uncertain when
/// its mean uncertainty is > uncertainty_threshold (strict). An unset
/// uncertainty_threshold defaults to the mean of the whole uncertainty map.
struct PatchConfig {
  std::array<i64, 3> patch{2, 2, 2};
  double accuracy_threshold = 7.0 / 8.0;
  std::optional<double> uncertainty_threshold;
  i64 stride = 1;
};

/// Per-patch accurate/uncertain flags over the patch position grid.
struct PatchLabelGrid {
  std::array<i64, 3> dims{0, 0, 0};
  std::vector<std::uint8_t> accurate;
  std::vector<std::uint8_t> uncertain;
  i64 n() const { return dims[0] * dims[1] * dims[2]; }
};

PatchLabelGrid patch_labels(const LabelVolume& pred, const LabelVolume& target,
                            const Volume& unc, const PatchConfig& cfg);

struct PatchCounts {
  i64 n_ac = 0;  // accurate and certain
  i64 n_au = 0;  // accurate and uncertain
  i64 n_ic = 0;  // inaccurate and certain
  i64 n_iu = 0;  // inaccurate and uncertain
  i64 n() const { return n_ac + n_au + n_ic + n_iu; }
};

PatchCounts patch_counts(const PatchLabelGrid& grid);

/// P(accurate | certain) and P(uncertain | inaccurate). A conditional whose
/// conditioning event has zero patches is reported as absent.
struct ConditionalProbs {
  std::optional<double> p_accurate_given_certain;
  std::optional<double> p_uncertain_given_inaccurate;
};

ConditionalProbs conditional_probs(const PatchCounts& counts);

/// (n_ac + n_iu) / n over the 3-d patch grid.
double pavpu3d(const LabelVolume& pred, const LabelVolume& target,
               const Volume& unc, const PatchConfig& cfg);

/// Mean of the uncertainty map over all voxels.
double uq_mean(const Volume& unc);

struct MetricsReport {
  std::string sample = "sample";
  std::string method = "model";
  double accuracy = 0.0;
  double uq_mean = 0.0;
  std::optional<double> p_accurate_given_certain;
  std::optional<double> p_uncertain_given_inaccurate;
  double pavpu3d = 0.0;
  i64 n = 0, n_ac = 0, n_au = 0, n_ic = 0, n_iu = 0;
};

MetricsReport evaluate_sample(const LabelVolume& pred, const LabelVolume& target,
                              const Volume& unc, const PatchConfig& cfg,
                              const std::string& sample = "sample",
                              const std::string& method = "model");

std::string report_to_json(const MetricsReport& r);
std::string report_csv_header();
std::string report_to_csv_row(const MetricsReport& r);

}  // namespace uqvol
