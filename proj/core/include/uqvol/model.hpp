#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "uqvol/bayes.hpp"
#include "uqvol/layers.hpp"
#include "uqvol/rng.hpp"
#include "uqvol/tensor.hpp"

namespace uqvol {

enum class Mode { bcnn, mcdn };

/// Encoder-decoder architecture: 4 encoder stages (deterministic convs) with
/// max pooling between stages, 3 decoder stages with skip connections, and a
/// 1x1x1 sigmoid head. Stage i applies 2^(base_filter_exponent + i) filters.
/// In bcnn mode every decoder convolution (including the head) is a Flipout
/// variational convolution; in mcdn mode they are deterministic and spatial
/// dropout is applied at the end of each stage that precedes an upsample
/// (bridge and decoder stages 1-2), active at inference.
struct ArchConfig {
  Mode mode = Mode::bcnn;
  int base_filter_exponent = 3;
  int groups = 4;
  double dropout_rate = 0.2;  // mcdn only
  double norm_eps = 1e-5;
  double init_stddev = 0.05;  // kernel / posterior-mean init
  double init_sigma = 0.1;    // initial posterior stddev
};

struct ParamBlock {
  std::string path;
  Tensor value;
};

struct ModelState {
  ArchConfig cfg;
  std::vector<ParamBlock> params;
  std::map<std::string, std::size_t> index;

  Tensor& param(const std::string& path);
  const Tensor& param(const std::string& path) const;
  bool has_param(const std::string& path) const;
  i64 param_count() const;
};

/// Construct and initialize a model. Initialization streams are keyed by
/// parameter path so the bcnn posterior means and the mcdn kernels of the
/// same layer receive identical draws for a given seed.
ModelState build(const ArchConfig& cfg, Rng& rng);

/// Frozen stochastic draws for one forward/backward pass, keyed by layer
/// path. Replaying the same bundle makes the model a deterministic function
/// of its parameters (used by the finite-difference checks).
struct NoiseBundle {
  std::map<std::string, FlipoutNoise> flipout;
  std::map<std::string, DropoutMask> dropout;
};

NoiseBundle draw_noise(const ModelState& m, i64 batch, Rng& rng);

struct ForwardResult {
  Tensor sigmoid;   // same shape as input, 1 channel, values in (0, 1)
  double total_kl;  // sum of layer KLs (0 in mcdn mode)
};

/// Stochastic forward (draws noise from rng) or deterministic forward
/// (posterior means, dropout off) when stochastic is false.
ForwardResult forward(const ModelState& m, const Tensor& x, Rng& rng,
                      bool stochastic);

/// Forward under a frozen noise bundle; nullptr means deterministic.
ForwardResult forward_with_noise(const ModelState& m, const Tensor& x,
                                 const NoiseBundle* noise);

/// Scale of the KL term inside the per-batch loss: k_weight / minibatches.
struct LossScale {
  double k_weight = 1.0;
  i64 minibatches = 1;
};

struct BackwardResult {
  std::vector<Tensor> grads;  // parallel to ModelState::params
  double nll = 0.0;
  double kl = 0.0;
  double loss = 0.0;  // nll + (k/M) * kl
};

/// Gradients of nll + (k/M)*kl w.r.t. every parameter under a frozen draw.
BackwardResult backward_with_noise(const ModelState& m, const Tensor& x,
                                   const Tensor& target, const LossScale& scale,
                                   const NoiseBundle* noise);

/// Draws one noise bundle and differentiates through it.
BackwardResult backward(const ModelState& m, const Tensor& x,
                        const Tensor& target, const LossScale& scale, Rng& rng);

/// Loss value only, same frozen-draw semantics (finite-difference oracle).
double loss_with_noise(const ModelState& m, const Tensor& x, const Tensor& target,
                       const LossScale& scale, const NoiseBundle* noise);

/// Batch sampler suitable for chunked Monte Carlo prediction.
std::function<Tensor(const Tensor&, Rng&)> make_sampler(const ModelState& m);

/// Binary target volume stack as a [B, d, h, w, 1] tensor of 0/1 values.
Tensor tensor_from_labels(const std::vector<const LabelVolume*>& labels);

// ---------------------------------------------------------------------------
// Trainable-parameter accounting. The assumption set captures the
// architecture details a schematic cannot pin down (kernel extents, where
// normalization layers sit, how the head bias is treated) so alternative
// readings can be costed without rebuilding the network.
// ---------------------------------------------------------------------------
struct CountAssumptions {
  int base_filter_exponent = 3;
  int hidden_kernel = 3;  // encoder and post-concat decoder convs
  int up_kernel = 3;      // conv applied right after each upsample
  int head_kernel = 1;
  bool norm_after_concat = false;
  bool norm_after_head = false;
  bool bayesian_decoder = false;  // posterior doubles decoder kernel entries
  bool bayes_head_bias_mean_field = false;
};

i64 expected_param_count(const CountAssumptions& a);

// JSON round trip used by the checkpoint header.
std::string arch_to_json(const ArchConfig& cfg);
ArchConfig arch_from_json(const std::string& text);

}  // namespace uqvol
