// Finite-difference verification of every layer's analytic gradients, shared
// between the unit tests and the acceptance suite. Each run draws random
// small instances, differentiates sum(upstream * forward) analytically, and
// compares against central differences (eps = 1e-3).
#pragma once

#include <functional>
#include <vector>

#include "support/oracles.hpp"
#include "uqvol/bayes.hpp"
#include "uqvol/layers.hpp"
#include "uqvol/model.hpp"
#include "uqvol/rng.hpp"

namespace gradsuite {

using oracle::fd_max_rel_err;
using oracle::fd_max_rel_err_sampled;
using oracle::random_tensor;
using oracle::random_tensor_away_from_zero;
using uqvol::i64;
using uqvol::Rng;
using uqvol::Tensor;

inline double weighted_sum(const Tensor& y, const Tensor& upstream) {
  double s = 0.0;
  for (i64 i = 0; i < y.size(); ++i) s += y[i] * upstream[i];
  return s;
}

inline double conv3d(int instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < instances; ++t) {
    const i64 ci = 1 + static_cast<i64>(rng.below(3));
    const i64 co = 1 + static_cast<i64>(rng.below(3));
    const i64 k = rng.below(2) ? 3 : 1;
    Tensor x = random_tensor({1 + static_cast<i64>(rng.below(2)), 3, 4, 3, ci}, rng);
    Tensor kernel = random_tensor({k, k, k, ci, co}, rng, 0.5);
    std::vector<double> bias(static_cast<std::size_t>(co));
    for (auto& b : bias) b = rng.normal();
    const Tensor upstream =
        random_tensor({x.dim(0), x.dim(1), x.dim(2), x.dim(3), co}, rng);

    const uqvol::LayerGrads g = uqvol::conv3d_backward(x, kernel, upstream);
    auto loss = [&]() {
      return weighted_sum(uqvol::conv3d_forward(x, kernel, bias), upstream);
    };
    worst = std::max(worst, fd_max_rel_err(x.data, loss, g.input_grad.data));
    worst = std::max(worst,
                     fd_max_rel_err(kernel.data, loss, g.param_grads.at("kernel").data));
    worst = std::max(worst, fd_max_rel_err(bias, loss, g.param_grads.at("bias").data));
  }
  return worst;
}

inline double group_norm(int instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < instances; ++t) {
    const int groups = rng.below(2) ? 2 : 4;
    const i64 c = groups * (1 + static_cast<i64>(rng.below(2)));
    Tensor x = random_tensor({2, 3, 2, 3, c}, rng, 1.5);
    std::vector<double> gamma(static_cast<std::size_t>(c)), beta(static_cast<std::size_t>(c));
    for (auto& v : gamma) v = 0.5 + rng.uniform();
    for (auto& v : beta) v = rng.normal();
    const Tensor upstream = random_tensor(x.shape, rng);

    uqvol::GroupNormCache cache;
    uqvol::group_norm_forward(x, groups, gamma, beta, 1e-5, &cache);
    const uqvol::LayerGrads g = uqvol::group_norm_backward(x, groups, gamma, cache, upstream);
    auto loss = [&]() {
      return weighted_sum(uqvol::group_norm_forward(x, groups, gamma, beta, 1e-5),
                          upstream);
    };
    worst = std::max(worst, fd_max_rel_err(x.data, loss, g.input_grad.data));
    worst = std::max(worst,
                     fd_max_rel_err(gamma, loss, g.param_grads.at("gamma").data));
    worst = std::max(worst, fd_max_rel_err(beta, loss, g.param_grads.at("beta").data));
  }
  return worst;
}

inline double max_pool(int instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < instances; ++t) {
    const i64 c = 1 + static_cast<i64>(rng.below(3));
    Tensor x = random_tensor({1 + static_cast<i64>(rng.below(2)), 4, 2, 4, c}, rng);
    const uqvol::MaxPoolResult fwd = uqvol::max_pool_forward(x);
    const Tensor upstream = random_tensor(fwd.y.shape, rng);
    const Tensor input_grad = uqvol::max_pool_backward(fwd.argmax, x.shape, upstream);
    auto loss = [&]() {
      return weighted_sum(uqvol::max_pool_forward(x).y, upstream);
    };
    worst = std::max(worst, fd_max_rel_err(x.data, loss, input_grad.data));
  }
  return worst;
}

inline double upsample(int instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < instances; ++t) {
    const i64 c = 1 + static_cast<i64>(rng.below(3));
    Tensor x = random_tensor({1, 2, 3, 2, c}, rng);
    const Tensor y = uqvol::upsample_nn_forward(x);
    const Tensor upstream = random_tensor(y.shape, rng);
    const Tensor input_grad = uqvol::upsample_nn_backward(upstream);
    auto loss = [&]() { return weighted_sum(uqvol::upsample_nn_forward(x), upstream); };
    worst = std::max(worst, fd_max_rel_err(x.data, loss, input_grad.data));
  }
  return worst;
}

inline double concat(int instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < instances; ++t) {
    const i64 ca = 1 + static_cast<i64>(rng.below(3));
    const i64 cb = 1 + static_cast<i64>(rng.below(3));
    Tensor a = random_tensor({1, 2, 3, 2, ca}, rng);
    Tensor b = random_tensor({1, 2, 3, 2, cb}, rng);
    const Tensor y = uqvol::concat_channels(a, b);
    const Tensor upstream = random_tensor(y.shape, rng);
    const auto [ga, gb] = uqvol::split_channels(upstream, ca);
    auto loss = [&]() { return weighted_sum(uqvol::concat_channels(a, b), upstream); };
    worst = std::max(worst, fd_max_rel_err(a.data, loss, ga.data));
    worst = std::max(worst, fd_max_rel_err(b.data, loss, gb.data));
  }
  return worst;
}

inline double sigmoid(int instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < instances; ++t) {
    Tensor x = random_tensor({1, 2, 3, 2, 2}, rng, 1.5);
    const Tensor y = uqvol::sigmoid_forward(x);
    const Tensor upstream = random_tensor(y.shape, rng);
    const Tensor input_grad = uqvol::sigmoid_backward(y, upstream);
    auto loss = [&]() { return weighted_sum(uqvol::sigmoid_forward(x), upstream); };
    worst = std::max(worst, fd_max_rel_err(x.data, loss, input_grad.data));
  }
  return worst;
}

inline double relu(int instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < instances; ++t) {
    Tensor x = random_tensor_away_from_zero({1, 2, 3, 2, 2}, rng, 0.05);
    const Tensor upstream = random_tensor(x.shape, rng);
    const Tensor input_grad = uqvol::relu_backward(x, upstream);
    auto loss = [&]() { return weighted_sum(uqvol::relu_forward(x), upstream); };
    worst = std::max(worst, fd_max_rel_err(x.data, loss, input_grad.data));
  }
  return worst;
}

inline double spatial_dropout(int instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < instances; ++t) {
    const i64 c = 2 + static_cast<i64>(rng.below(3));
    Tensor x = random_tensor({2, 2, 3, 2, c}, rng);
    Rng mask_rng = rng.split(static_cast<std::uint64_t>(t));
    const uqvol::DropoutMask mask = uqvol::draw_dropout_mask(2, c, 0.4, mask_rng);
    const Tensor y = uqvol::spatial_dropout_forward(x, mask);
    const Tensor upstream = random_tensor(y.shape, rng);
    const Tensor input_grad = uqvol::spatial_dropout_backward(mask, upstream);
    auto loss = [&]() {
      return weighted_sum(uqvol::spatial_dropout_forward(x, mask), upstream);
    };
    worst = std::max(worst, fd_max_rel_err(x.data, loss, input_grad.data));
  }
  return worst;
}

// Flipout convolution with a frozen draw, differentiated through mean, rho,
// bias, and the input.
inline double bayes_conv3d(int instances, std::uint64_t seed) {
  Rng rng(seed);
  double worst = 0.0;
  for (int t = 0; t < instances; ++t) {
    const i64 ci = 1 + static_cast<i64>(rng.below(2));
    const i64 co = 1 + static_cast<i64>(rng.below(2));
    Tensor x = random_tensor({2, 3, 2, 3, ci}, rng);
    uqvol::PosteriorParams p;
    p.mean = random_tensor({3, 3, 3, ci, co}, rng, 0.5);
    p.rho = random_tensor({3, 3, 3, ci, co}, rng, 0.5, -1.0);
    p.bias_mean.resize(static_cast<std::size_t>(co));
    for (auto& b : p.bias_mean) b = rng.normal();
    Rng noise_rng = rng.split(static_cast<std::uint64_t>(t) + 1);
    const uqvol::FlipoutNoise noise =
        uqvol::draw_flipout_noise(p.mean.shape, x.dim(0), noise_rng);
    const Tensor upstream =
        random_tensor({x.dim(0), x.dim(1), x.dim(2), x.dim(3), co}, rng);

    const uqvol::BayesConvGrads g = uqvol::bayes_conv3d_backward(x, p, noise, upstream);
    auto loss = [&]() {
      return weighted_sum(uqvol::bayes_conv3d_forward(x, p, noise), upstream);
    };
    worst = std::max(worst, fd_max_rel_err(x.data, loss, g.input_grad.data));
    worst = std::max(worst, fd_max_rel_err(p.mean.data, loss, g.mean_grad.data));
    worst = std::max(worst, fd_max_rel_err(p.rho.data, loss, g.rho_grad.data));
    worst = std::max(worst, fd_max_rel_err(p.bias_mean, loss, g.bias_grad));
  }
  return worst;
}

// Whole-model loss gradient spot check on sampled parameters under one
// frozen noise bundle.
inline double full_model(uqvol::Mode mode, int sampled_params, std::uint64_t seed) {
  Rng rng(seed);
  uqvol::ArchConfig cfg;
  cfg.mode = mode;
  cfg.base_filter_exponent = 1;
  Rng build_rng = rng.split("build");
  uqvol::ModelState m = uqvol::build(cfg, build_rng);

  const Tensor x = random_tensor({1, 8, 8, 8, 1}, rng, 0.8);
  Tensor target({1, 8, 8, 8, 1});
  for (i64 i = 0; i < target.size(); ++i) target[i] = rng.below(2) ? 1.0 : 0.0;
  Rng noise_rng = rng.split("noise");
  const uqvol::NoiseBundle noise = uqvol::draw_noise(m, 1, noise_rng);
  const uqvol::LossScale scale{0.5, 4};

  const uqvol::BackwardResult b =
      uqvol::backward_with_noise(m, x, target, scale, &noise);

  // Flatten: pick sampled_params random (block, element) slots. The deep
  // composition has much higher curvature than a single layer, so the step
  // is smaller than the per-layer default.
  double worst = 0.0;
  Rng pick = rng.split("pick");
  auto loss = [&]() { return uqvol::loss_with_noise(m, x, target, scale, &noise); };
  for (int s = 0; s < sampled_params; ++s) {
    const auto block =
        static_cast<std::size_t>(pick.below(static_cast<std::uint64_t>(m.params.size())));
    Tensor& value = m.params[block].value;
    const i64 elem = static_cast<i64>(pick.below(static_cast<std::uint64_t>(value.size())));
    const std::vector<i64> idx{elem};
    worst = std::max(worst, fd_max_rel_err_sampled(value.data, loss,
                                                   b.grads[block].data, idx, 1e-5));
  }
  return worst;
}

}  // namespace gradsuite
