#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "uqvol/model.hpp"
#include "uqvol/rng.hpp"
#include "uqvol/volume.hpp"

namespace uqvol {

/// Monotonic KL annealing: the weight stays at k0 through epoch s, then
/// climbs by k1 per epoch, capped at 1.
struct AnnealSchedule {
  int start_epoch = 1;  // s
  double k0 = 0.5;
  double k1 = 0.5;
};

double kl_weight(const AnnealSchedule& sched, int epoch);

/// Summed binary cross-entropy over all voxels; probabilities clamped to
/// [1e-7, 1 - 1e-7] inside the logs.
double nll_binary(const Tensor& pred, const Tensor& target);
double nll_binary(const Volume& pred, const LabelVolume& target);

struct LossConfig {
  AnnealSchedule schedule;
  i64 minibatches = 1;  // M
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

/// Per-batch training loss: nll + (k_E / M) * kl.
double elbo_loss(double nll, double kl, const LossConfig& cfg, int epoch);

/// Adam with bias correction. Slot tensors match the parameter shapes.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  i64 step = 0;
};

AdamState make_adam_state(const std::vector<ParamBlock>& params);
void adam_step(std::vector<ParamBlock>& params, const std::vector<Tensor>& grads,
               AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

struct TrainRow {
  int epoch = 0;
  int batch = 0;
  double nll = 0.0;
  double kl = 0.0;
  double k_e = 0.0;
  double loss = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<TrainRow> rows;
  i64 minibatches_per_epoch = 0;
};

struct TrainConfig {
  LossConfig loss;  // minibatches is recomputed from the dataset
  int epochs = 5;
  i64 batch_size = 2;
  double clip_norm = 0.0;  // 0 disables the global-norm clip
};

using Dataset = std::vector<std::pair<Volume, LabelVolume>>;

/// Bayes-by-Backprop training loop: shuffled minibatches, one stochastic
/// forward per batch, Adam updates, per-batch report rows. Epochs are
/// 1-indexed so the annealing schedule reads exactly as specified.
/// on_epoch_end (when set) is invoked after each epoch for checkpointing.
TrainReport train(ModelState& model, const Dataset& dataset, const TrainConfig& cfg,
                  Rng& rng,
                  const std::function<void(const ModelState&, int)>& on_epoch_end = {});

/// CSV log: optional verbatim config echo as comment lines, then one row per
/// logged batch with columns (epoch, batch, nll, kl, k_E, loss, seconds).
void write_train_csv(std::ostream& os, const TrainReport& report,
                     const std::string& config_echo = {});

}  // namespace uqvol
