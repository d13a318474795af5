#include "uqvol/metrics.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>

namespace uqvol {

namespace {

void validate_inputs(const LabelVolume& pred, const LabelVolume& target,
                     const Volume& unc, const PatchConfig& cfg) {
  if (pred.shape != target.shape)
    throw ShapeMismatch("patch metrics: pred/target shapes differ");
  if (unc.shape[0] != pred.shape[0] || unc.shape[1] != pred.shape[1] ||
      unc.shape[2] != pred.shape[2] || unc.shape[3] != 1)
    throw ShapeMismatch("patch metrics: uncertainty map shape mismatch");
  if (cfg.stride < 1) throw BadConfig("patch metrics: stride must be >= 1");
  for (std::size_t i = 0; i < 3; ++i) {
    if (cfg.patch[i] < 1) throw BadConfig("patch metrics: patch dims must be >= 1");
    if (pred.shape[i] < cfg.patch[i])
      throw VolumeSmallerThanPatch("patch metrics: volume smaller than patch");
  }
}

}  // namespace

PatchLabelGrid patch_labels(const LabelVolume& pred, const LabelVolume& target,
                            const Volume& unc, const PatchConfig& cfg) {
  validate_inputs(pred, target, unc, cfg);
  const double unc_threshold =
      cfg.uncertainty_threshold ? *cfg.uncertainty_threshold : uq_mean(unc);

  PatchLabelGrid grid;
  for (std::size_t i = 0; i < 3; ++i)
    grid.dims[i] = (pred.shape[i] - cfg.patch[i]) / cfg.stride + 1;
  grid.accurate.reserve(static_cast<std::size_t>(grid.n()));
  grid.uncertain.reserve(static_cast<std::size_t>(grid.n()));

  const double patch_voxels =
      static_cast<double>(cfg.patch[0] * cfg.patch[1] * cfg.patch[2]);
  for (i64 pd = 0; pd < grid.dims[0]; ++pd) {
    for (i64 ph = 0; ph < grid.dims[1]; ++ph) {
      for (i64 pw = 0; pw < grid.dims[2]; ++pw) {
        const i64 d0 = pd * cfg.stride, h0 = ph * cfg.stride, w0 = pw * cfg.stride;
        i64 correct = 0;
        double unc_sum = 0.0;
        for (i64 d = 0; d < cfg.patch[0]; ++d)
          for (i64 h = 0; h < cfg.patch[1]; ++h)
            for (i64 w = 0; w < cfg.patch[2]; ++w) {
              if (pred.at(d0 + d, h0 + h, w0 + w) == target.at(d0 + d, h0 + h, w0 + w))
                ++correct;
              unc_sum += unc.at(d0 + d, h0 + h, w0 + w, 0);
            }
        grid.accurate.push_back(
            static_cast<double>(correct) / patch_voxels >= cfg.accuracy_threshold ? 1 : 0);
        grid.uncertain.push_back(unc_sum / patch_voxels > unc_threshold ? 1 : 0);
      }
    }
  }
  return grid;
}

PatchCounts patch_counts(const PatchLabelGrid& grid) {
  PatchCounts c;
  for (std::size_t i = 0; i < grid.accurate.size(); ++i) {
    const bool a = grid.accurate[i] != 0;
    const bool u = grid.uncertain[i] != 0;
    if (a && !u) ++c.n_ac;
    if (a && u) ++c.n_au;
    if (!a && !u) ++c.n_ic;
    if (!a && u) ++c.n_iu;
  }
  return c;
}

ConditionalProbs conditional_probs(const PatchCounts& c) {
  ConditionalProbs p;
  const i64 certain = c.n_ac + c.n_ic;
  const i64 inaccurate = c.n_ic + c.n_iu;
  if (certain > 0)
    p.p_accurate_given_certain =
        static_cast<double>(c.n_ac) / static_cast<double>(certain);
  if (inaccurate > 0)
    p.p_uncertain_given_inaccurate =
        static_cast<double>(c.n_iu) / static_cast<double>(inaccurate);
  return p;
}

double pavpu3d(const LabelVolume& pred, const LabelVolume& target,
               const Volume& unc, const PatchConfig& cfg) {
  const PatchCounts c = patch_counts(patch_labels(pred, target, unc, cfg));
  return static_cast<double>(c.n_ac + c.n_iu) / static_cast<double>(c.n());
}

double uq_mean(const Volume& unc) {
  double sum = 0.0;
  for (double v : unc.data) sum += v;
  return sum / static_cast<double>(unc.size());
}

MetricsReport evaluate_sample(const LabelVolume& pred, const LabelVolume& target,
                              const Volume& unc, const PatchConfig& cfg,
                              const std::string& sample, const std::string& method) {
  MetricsReport r;
  r.sample = sample;
  r.method = method;
  r.accuracy = voxel_accuracy(pred, target);
  r.uq_mean = uq_mean(unc);
  const PatchCounts c = patch_counts(patch_labels(pred, target, unc, cfg));
  const ConditionalProbs p = conditional_probs(c);
  r.p_accurate_given_certain = p.p_accurate_given_certain;
  r.p_uncertain_given_inaccurate = p.p_uncertain_given_inaccurate;
  r.pavpu3d = static_cast<double>(c.n_ac + c.n_iu) / static_cast<double>(c.n());
  r.n = c.n();
  r.n_ac = c.n_ac;
  r.n_au = c.n_au;
  r.n_ic = c.n_ic;
  r.n_iu = c.n_iu;
  return r;
}

std::string report_to_json(const MetricsReport& r) {
  nlohmann::json j;
  j["sample"] = r.sample;
  j["method"] = r.method;
  j["accuracy"] = r.accuracy;
  j["uq_mean"] = r.uq_mean;
  if (r.p_accurate_given_certain)
    j["p_accurate_given_certain"] = *r.p_accurate_given_certain;
  else
    j["p_accurate_given_certain"] = nullptr;
  if (r.p_uncertain_given_inaccurate)
    j["p_uncertain_given_inaccurate"] = *r.p_uncertain_given_inaccurate;
  else
    j["p_uncertain_given_inaccurate"] = nullptr;
  j["pavpu3d"] = r.pavpu3d;
  j["patches"] = {{"n", r.n},   {"n_ac", r.n_ac}, {"n_au", r.n_au},
                  {"n_ic", r.n_ic}, {"n_iu", r.n_iu}};
  return j.dump(2) + "\n";
}

std::string report_csv_header() {
  return "sample,method,accuracy,uq_mean,p_accurate_given_certain,"
         "p_uncertain_given_inaccurate,pavpu3d,n,n_ac,n_au,n_ic,n_iu\n";
}

std::string report_to_csv_row(const MetricsReport& r) {
  char buf[512];
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char b[64];
    std::snprintf(b, sizeof(b), "%.17g", *v);
    return std::string(b);
  };
  std::snprintf(buf, sizeof(buf), "%s,%s,%.17g,%.17g,%s,%s,%.17g,%lld,%lld,%lld,%lld,%lld\n",
                r.sample.c_str(), r.method.c_str(), r.accuracy, r.uq_mean,
                opt(r.p_accurate_given_certain).c_str(),
                opt(r.p_uncertain_given_inaccurate).c_str(), r.pavpu3d,
                static_cast<long long>(r.n), static_cast<long long>(r.n_ac),
                static_cast<long long>(r.n_au), static_cast<long long>(r.n_ic),
                static_cast<long long>(r.n_iu));
  return std::string(buf);
}

}  // namespace uqvol
