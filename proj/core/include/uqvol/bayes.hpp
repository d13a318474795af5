#pragma once

#include <vector>

#include "uqvol/layers.hpp"
#include "uqvol/rng.hpp"
#include "uqvol/tensor.hpp"

namespace uqvol {

double softplus(double x);
double softplus_inverse(double y);

/// Variational parameters of one Bayesian convolution: a diagonal-Gaussian
/// posterior over the kernel with stddev = softplus(rho), plus a
/// deterministic bias. The prior is the fixed standard normal.
struct PosteriorParams {
  Tensor mean;                    // [kd, kh, kw, Ci, Co]
  Tensor rho;                     // same shape; stddev = softplus(rho)
  std::vector<double> bias_mean;  // [Co]
};

/// Closed-form KL(q(w) || N(0, 1)) summed over kernel entries:
/// sum (mean^2 + sigma^2 - 1 - ln sigma^2) / 2. Biases are excluded.
double kl_to_standard_normal(const PosteriorParams& p);

/// Gradients of kl_to_standard_normal w.r.t. mean and rho.
struct KlGrads {
  Tensor mean_grad;
  Tensor rho_grad;
};
KlGrads kl_to_standard_normal_backward(const PosteriorParams& p);

/// One Flipout draw: a shared kernel-shaped standard-normal perturbation
/// plus per-example random signs over input and output channels. Freezing a
/// draw makes the layer an ordinary differentiable function.
struct FlipoutNoise {
  Tensor eps;                    // [kd, kh, kw, Ci, Co]
  std::vector<double> in_signs;  // [B * Ci], each +-1
  std::vector<double> out_signs; // [B * Co], each +-1
};

FlipoutNoise draw_flipout_noise(const std::vector<i64>& kernel_shape, i64 batch,
                                Rng& rng);

/// Stochastic convolution under one Flipout draw:
///   y_n = conv(x_n, mean) + conv(x_n * s_n, softplus(rho) * eps) * r_n + bias
/// so the per-example effective kernel is marginally N(mean, softplus(rho)^2).
Tensor bayes_conv3d_forward(const Tensor& x, const PosteriorParams& p,
                            const FlipoutNoise& noise);

struct BayesConvGrads {
  Tensor input_grad;
  Tensor mean_grad;
  Tensor rho_grad;
  std::vector<double> bias_grad;
};

/// Gradients of sum(upstream * forward) under the same frozen draw.
BayesConvGrads bayes_conv3d_backward(const Tensor& x, const PosteriorParams& p,
                                     const FlipoutNoise& noise,
                                     const Tensor& upstream);

/// Convenience: draw noise, run the stochastic forward, and return the
/// layer KL alongside the output.
struct BayesConvResult {
  Tensor y;
  double kl = 0.0;
};
BayesConvResult bayes_conv3d(const Tensor& x, const PosteriorParams& p, Rng& rng);

/// Deterministic forward with the posterior mean kernel (the sigma -> 0 limit).
Tensor bayes_conv3d_mean(const Tensor& x, const PosteriorParams& p);

}  // namespace uqvol
