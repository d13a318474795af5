#include "uqvol/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace uqvol {

double kl_weight(const AnnealSchedule& sched, int epoch) {
  if (epoch <= sched.start_epoch) return sched.k0;
  return std::min(1.0, sched.k0 + sched.k1 * (epoch - sched.start_epoch));
}

namespace {

constexpr double kProbClamp = 1e-7;

double nll_span(const double* pred, const double* target, i64 n) {
  double nll = 0.0;
  for (i64 i = 0; i < n; ++i) {
    const double p = std::clamp(pred[i], kProbClamp, 1.0 - kProbClamp);
    nll -= target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p);
  }
  return nll;
}

}  // namespace

double nll_binary(const Tensor& pred, const Tensor& target) {
  if (pred.shape != target.shape) throw ShapeMismatch("nll_binary: shape mismatch");
  return nll_span(pred.data.data(), target.data.data(), pred.size());
}

double nll_binary(const Volume& pred, const LabelVolume& target) {
  if (pred.shape[0] != target.shape[0] || pred.shape[1] != target.shape[1] ||
      pred.shape[2] != target.shape[2] || pred.shape[3] != 1)
    throw ShapeMismatch("nll_binary: volume/label shape mismatch");
  double nll = 0.0;
  for (i64 i = 0; i < pred.size(); ++i) {
    const double p = std::clamp(pred.data[static_cast<std::size_t>(i)], kProbClamp,
                                1.0 - kProbClamp);
    const double t = target.data[static_cast<std::size_t>(i)];
    nll -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return nll;
}

double elbo_loss(double nll, double kl, const LossConfig& cfg, int epoch) {
  if (kl < 0.0) throw BadConfig("elbo_loss: kl must be nonnegative");
  const double k = kl_weight(cfg.schedule, epoch);
  return nll + (k / static_cast<double>(cfg.minibatches)) * kl;
}

AdamState make_adam_state(const std::vector<ParamBlock>& params) {
  AdamState s;
  s.m.reserve(params.size());
  s.v.reserve(params.size());
  for (const auto& p : params) {
    s.m.push_back(Tensor::zeros(p.value.shape));
    s.v.push_back(Tensor::zeros(p.value.shape));
  }
  return s;
}

void adam_step(std::vector<ParamBlock>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw ShapeMismatch("adam_step: parameter/gradient count mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].value;
    const Tensor& g = grads[i];
    if (g.shape != p.shape) throw ShapeMismatch("adam_step: gradient shape mismatch");
    Tensor& m = state.m[i];
    Tensor& v = state.v[i];
    for (i64 k = 0; k < p.size(); ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

TrainReport train(ModelState& model, const Dataset& dataset, const TrainConfig& cfg,
                  Rng& rng,
                  const std::function<void(const ModelState&, int)>& on_epoch_end) {
  if (dataset.empty()) throw EmptyDataset("train: dataset is empty");
  if (cfg.batch_size < 1) throw BadConfig("train: batch_size must be >= 1");

  const i64 n = static_cast<i64>(dataset.size());
  const i64 mb = (n + cfg.batch_size - 1) / cfg.batch_size;  // M = ceil(N/B)
  LossConfig loss_cfg = cfg.loss;
  loss_cfg.minibatches = mb;

  TrainReport report;
  report.minibatches_per_epoch = mb;
  AdamState adam = make_adam_state(model.params);

  std::vector<i64> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng = rng.split(0x5f5full * static_cast<std::uint64_t>(epoch));
    for (i64 i = n - 1; i > 0; --i) {
      const i64 j = static_cast<i64>(shuffle_rng.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    const double k_e = kl_weight(loss_cfg.schedule, epoch);

    for (i64 batch = 0; batch < mb; ++batch) {
      const auto t0 = std::chrono::steady_clock::now();
      const i64 lo = batch * cfg.batch_size;
      const i64 hi = std::min(n, lo + cfg.batch_size);

      std::vector<const Volume*> vols;
      std::vector<const LabelVolume*> labs;
      for (i64 i = lo; i < hi; ++i) {
        const auto& sample = dataset[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        vols.push_back(&sample.first);
        labs.push_back(&sample.second);
      }
      const Tensor x = tensor_from_volumes(vols);
      const Tensor t = tensor_from_labels(labs);

      Rng step_rng = rng.split(
          0xb4dcull ^ (static_cast<std::uint64_t>(epoch) << 32 |
                       static_cast<std::uint64_t>(batch)));
      BackwardResult b =
          backward(model, x, t, LossScale{k_e, mb}, step_rng);

      if (cfg.clip_norm > 0.0) {
        double sq = 0.0;
        for (const Tensor& g : b.grads)
          for (i64 k = 0; k < g.size(); ++k) sq += g[k] * g[k];
        const double norm = std::sqrt(sq);
        if (norm > cfg.clip_norm) {
          const double s = cfg.clip_norm / norm;
          for (Tensor& g : b.grads)
            for (i64 k = 0; k < g.size(); ++k) g[k] *= s;
        }
      }
      adam_step(model.params, b.grads, adam, loss_cfg.learning_rate, loss_cfg.beta1,
                loss_cfg.beta2, loss_cfg.adam_eps);

      TrainRow row;
      row.epoch = epoch;
      row.batch = static_cast<int>(batch);
      row.nll = b.nll;
      row.kl = b.kl;
      row.k_e = k_e;
      row.loss = b.loss;
      row.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      report.rows.push_back(row);
    }
    if (on_epoch_end) on_epoch_end(model, epoch);
  }
  return report;
}

void write_train_csv(std::ostream& os, const TrainReport& report,
                     const std::string& config_echo) {
  if (!config_echo.empty()) {
    std::istringstream lines(config_echo);
    std::string line;
    while (std::getline(lines, line)) os << "# " << line << "\n";
  }
  os << "epoch,batch,nll,kl,k_E,loss,seconds\n";
  char buf[256];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%.17g,%.6f\n", r.epoch,
                  r.batch, r.nll, r.kl, r.k_e, r.loss, r.seconds);
    os << buf;
  }
}

}  // namespace uqvol
