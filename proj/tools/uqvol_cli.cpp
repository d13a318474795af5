// uqvol: volumetric Bayesian segmentation with uncertainty maps.
//
// Subcommands: synth, train, predict, evaluate, slices. Exit codes:
// 0 success, 1 usage error, 2 data error.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "uqvol/bvol_io.hpp"
#include "uqvol/inference.hpp"
#include "uqvol/metrics.hpp"
#include "uqvol/model.hpp"
#include "uqvol/synth.hpp"
#include "uqvol/training.hpp"
#include "uqvol/volume.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json parse_json_file(const std::string& path) {
  const std::string text = uqvol::read_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw uqvol::BadConfig("config " + path + ": " + e.what());
  }
}

uqvol::ArchConfig arch_from_config(const json& j) {
  return uqvol::arch_from_json(j.dump());
}

std::string sample_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d", i);
  return buf;
}

uqvol::Dataset load_dataset(const std::string& dir) {
  std::vector<std::string> vols;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("vol_", 0) == 0 && e.path().extension() == ".bvol")
      vols.push_back(e.path().string());
  }
  std::sort(vols.begin(), vols.end());
  if (vols.empty())
    throw uqvol::EmptyDataset("no vol_*.bvol files in " + dir);
  uqvol::Dataset ds;
  for (const auto& vp : vols) {
    std::string lp = vp;
    const auto pos = lp.rfind("vol_");
    lp.replace(pos, 4, "lab_");
    ds.emplace_back(uqvol::read_bvol_volume(vp), uqvol::read_bvol_label(lp));
  }
  return ds;
}

std::vector<double> parse_percentiles(const std::string& csv) {
  std::vector<double> points;
  std::istringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) points.push_back(std::stod(tok));
  }
  if (points.empty()) throw uqvol::BadConfig("empty percentile list");
  return points;
}

int auto_batch(int mc_samples) {
  for (int b = 8; b > 1; --b) {
    if (mc_samples % b == 0) return b;
  }
  return 1;
}

int run_synth(const std::string& spec_path, const std::string& out_dir) {
  const json j = parse_json_file(spec_path);
  uqvol::SynthSpec spec;
  if (j.contains("shape")) {
    const auto s = j.at("shape").get<std::vector<uqvol::i64>>();
    if (s.size() != 3) throw uqvol::BadConfig("shape must have 3 entries");
    spec.shape = {s[0], s[1], s[2]};
  }
  spec.n_bodies = j.value("bodies", 2);
  const std::string kind = j.value("kind", "sphere");
  if (kind == "sphere") {
    spec.kind = uqvol::BodyKind::sphere;
  } else if (kind == "slab_with_void") {
    spec.kind = uqvol::BodyKind::slab_with_void;
  } else {
    throw uqvol::BadConfig("kind must be sphere or slab_with_void");
  }
  spec.noise_sigma = j.value("noise_sigma", 0.3);
  spec.blur_sigma = j.value("blur_sigma", 1.0);
  spec.seed = j.value("seed", std::uint64_t{0});
  const int count = j.value("count", 1);

  const auto pairs = uqvol::synth_dataset(spec, count);
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string tag = sample_name(static_cast<int>(i));
    uqvol::write_bvol(pairs[i].first, out_dir + "/vol_" + tag + ".bvol");
    uqvol::write_bvol(pairs[i].second, out_dir + "/lab_" + tag + ".bvol");
  }
  std::cout << "wrote " << pairs.size() << " volume/label pairs to " << out_dir
            << "\n";
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_ckpt) {
  const json j = parse_json_file(config_path);
  const uqvol::ArchConfig arch =
      arch_from_config(j.contains("arch") ? j.at("arch") : json::object());

  uqvol::TrainConfig cfg;
  cfg.epochs = j.value("epochs", 5);
  cfg.batch_size = j.value("batch_size", uqvol::i64{2});
  cfg.loss.learning_rate = j.value("learning_rate", 1e-3);
  cfg.loss.beta1 = j.value("beta1", 0.9);
  cfg.loss.beta2 = j.value("beta2", 0.999);
  cfg.loss.adam_eps = j.value("adam_eps", 1e-8);
  cfg.clip_norm = j.value("clip_norm", 0.0);
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    cfg.loss.schedule.start_epoch = s.value("start_epoch", 1);
    cfg.loss.schedule.k0 = s.value("k0", 0.5);
    cfg.loss.schedule.k1 = s.value("k1", 0.5);
  }
  const std::uint64_t seed = j.value("seed", std::uint64_t{0});

  const uqvol::Dataset ds = load_dataset(data_dir);
  uqvol::Rng build_rng(seed);
  uqvol::ModelState model = uqvol::build(arch, build_rng);
  uqvol::Rng train_rng = build_rng.split("train");

  const uqvol::TrainReport report = uqvol::train(
      model, ds, cfg, train_rng,
      [&out_ckpt](const uqvol::ModelState& m, int) { save_checkpoint(m, out_ckpt); });

  std::ostringstream csv;
  uqvol::write_train_csv(csv, report, uqvol::read_file(config_path));
  uqvol::atomic_write_file(out_ckpt + ".train.csv", csv.str());

  double last_nll = report.rows.empty() ? 0.0 : report.rows.back().nll;
  std::cout << "trained " << cfg.epochs << " epochs over " << ds.size()
            << " samples (M=" << report.minibatches_per_epoch
            << "); final batch nll " << last_nll << "\n"
            << "checkpoint: " << out_ckpt << "\n";
  return 0;
}

int run_predict(const std::string& ckpt, const std::string& volume_path,
                int mc_samples, int step, const std::string& percentiles_csv,
                double trim, std::uint64_t seed, const std::string& out_dir,
                const std::vector<uqvol::i64>& chunk_size, int batch_size) {
  const uqvol::ModelState model = uqvol::load_checkpoint(ckpt);
  const uqvol::Volume raw = uqvol::read_bvol_volume(volume_path);
  const uqvol::Volume volume = uqvol::normalize(raw);

  uqvol::InferenceConfig cfg;
  cfg.mc_samples = mc_samples;
  cfg.step = step;
  cfg.trim_fraction = trim;
  cfg.percentile_points = parse_percentiles(percentiles_csv);
  cfg.batch_size = batch_size > 0 ? batch_size : auto_batch(mc_samples);
  if (!chunk_size.empty()) {
    if (chunk_size.size() != 3)
      throw uqvol::BadConfig("--chunk-size needs 3 comma-separated values");
    cfg.chunk_size = {chunk_size[0], chunk_size[1], chunk_size[2]};
  }

  uqvol::Rng rng(seed);
  const uqvol::UncertaintyBundle bundle =
      uqvol::predict(uqvol::make_sampler(model), volume, cfg, rng);

  fs::create_directories(out_dir);
  uqvol::write_bvol(bundle.sigmoid, out_dir + "/sigmoid.bvol");
  uqvol::write_bvol(bundle.pred, out_dir + "/pred.bvol");
  uqvol::write_bvol(bundle.unc, out_dir + "/unc.bvol");
  for (const auto& [q, vol] : bundle.percentiles) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s/percentile_%g.bvol", out_dir.c_str(), q);
    uqvol::write_bvol(vol, buf);
  }
  std::cout << "wrote prediction bundle to " << out_dir << " (mc=" << mc_samples
            << ", step=" << step << ", trim=" << trim << ")\n";
  return 0;
}

int run_evaluate(const std::string& pred_dir, const std::string& target_path,
                 const std::string& out_path, const std::string& sample,
                 const std::string& method, uqvol::i64 stride) {
  const uqvol::LabelVolume pred = uqvol::read_bvol_label(pred_dir + "/pred.bvol");
  const uqvol::Volume unc = uqvol::read_bvol_volume(pred_dir + "/unc.bvol");
  const uqvol::LabelVolume target = uqvol::read_bvol_label(target_path);

  uqvol::PatchConfig cfg;
  cfg.stride = stride;
  const uqvol::MetricsReport report =
      uqvol::evaluate_sample(pred, target, unc, cfg, sample, method);

  uqvol::atomic_write_file(out_path, uqvol::report_to_json(report));
  uqvol::atomic_write_file(out_path + ".csv",
                           uqvol::report_csv_header() + uqvol::report_to_csv_row(report));
  std::cout << "accuracy " << report.accuracy << ", uq_mean " << report.uq_mean
            << ", pavpu3d " << report.pavpu3d << " -> " << out_path << "\n";
  return 0;
}

int run_slices(const std::string& volume_path, const std::string& axis, uqvol::i64 index,
               const std::string& out_path) {
  const uqvol::Volume v = uqvol::read_bvol_any(volume_path);
  int ax;
  if (axis == "z") {
    ax = 0;
  } else if (axis == "y") {
    ax = 1;
  } else if (axis == "x") {
    ax = 2;
  } else {
    throw uqvol::BadConfig("--axis must be z, y, or x");
  }
  uqvol::write_pgm_slice(v, ax, index, out_path);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"volumetric Bayesian segmentation with uncertainty maps"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate synthetic volume/label pairs");
  std::string synth_spec, synth_out;
  synth->add_option("--spec", synth_spec, "synthesis config (json)")->required();
  synth->add_option("--out", synth_out, "output directory")->required();

  auto* train = app.add_subcommand("train", "train a model on a dataset directory");
  std::string train_config, train_data, train_out;
  train->add_option("--config", train_config, "training config (json)")->required();
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "checkpoint output path")->required();

  auto* predict = app.add_subcommand("predict", "chunked Monte Carlo prediction");
  std::string pr_ckpt, pr_volume, pr_out, pr_percentiles = "33,67";
  int pr_mc = 48, pr_step = 3, pr_batch = 0;
  double pr_trim = 0.1;
  std::uint64_t pr_seed = 0;
  std::vector<uqvol::i64> pr_chunk;
  predict->add_option("--ckpt", pr_ckpt, "checkpoint path")->required();
  predict->add_option("--volume", pr_volume, "input volume (bvol)")->required();
  predict->add_option("--mc-samples", pr_mc, "Monte Carlo samples per chunk");
  predict->add_option("--step", pr_step, "chunk overlap step (1 = none)");
  predict->add_option("--percentiles", pr_percentiles, "comma-separated points");
  predict->add_option("--trim", pr_trim, "chunk border trim fraction");
  predict->add_option("--seed", pr_seed, "rng seed");
  predict->add_option("--chunk-size", pr_chunk, "chunk extents d,h,w")->delimiter(',');
  predict->add_option("--batch-size", pr_batch, "forward batch (0 = auto)");
  predict->add_option("--out", pr_out, "output directory")->required();

  auto* evaluate = app.add_subcommand("evaluate", "uncertainty-quality metrics");
  std::string ev_pred, ev_target, ev_out, ev_sample = "sample", ev_method = "model";
  uqvol::i64 ev_stride = 1;
  evaluate->add_option("--pred", ev_pred, "prediction bundle directory")->required();
  evaluate->add_option("--target", ev_target, "target label volume (bvol)")->required();
  evaluate->add_option("--out", ev_out, "report output path (json; csv alongside)")
      ->required();
  evaluate->add_option("--sample", ev_sample, "sample name for the report");
  evaluate->add_option("--method", ev_method, "method name for the report");
  evaluate->add_option("--stride", ev_stride, "patch stride");

  auto* slices = app.add_subcommand("slices", "export an 8-bit grayscale slice");
  std::string sl_volume, sl_axis = "z", sl_out;
  uqvol::i64 sl_index = 0;
  slices->add_option("--volume", sl_volume, "volume (bvol)")->required();
  slices->add_option("--axis", sl_axis, "slice axis: z, y, or x");
  slices->add_option("--index", sl_index, "slice index");
  slices->add_option("--out", sl_out, "output image (pgm)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) return run_synth(synth_spec, synth_out);
    if (*train) return run_train(train_config, train_data, train_out);
    if (*predict)
      return run_predict(pr_ckpt, pr_volume, pr_mc, pr_step, pr_percentiles, pr_trim,
                         pr_seed, pr_out, pr_chunk, pr_batch);
    if (*evaluate)
      return run_evaluate(ev_pred, ev_target, ev_out, ev_sample, ev_method, ev_stride);
    if (*slices) return run_slices(sl_volume, sl_axis, sl_index, sl_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
