#include "uqvol/bayes.hpp"

#include <cmath>

namespace uqvol {

namespace {

// x with per-example channel signs applied: out_n = x_n * signs[n, ci].
Tensor apply_channel_signs(const Tensor& x, const std::vector<double>& signs) {
  const i64 B = x.dim(0), C = x.dim(4);
  Tensor y(x.shape);
  const i64 spatial = x.dim(1) * x.dim(2) * x.dim(3);
  for (i64 b = 0; b < B; ++b) {
    const double* sb = signs.data() + b * C;
    for (i64 s = 0; s < spatial; ++s) {
      const double* px = x.data.data() + (b * spatial + s) * C;
      double* py = y.data.data() + (b * spatial + s) * C;
      for (i64 c = 0; c < C; ++c) py[c] = px[c] * sb[c];
    }
  }
  return y;
}

Tensor perturbation_kernel(const PosteriorParams& p, const FlipoutNoise& noise) {
  Tensor dw(p.rho.shape);
  for (i64 i = 0; i < dw.size(); ++i) dw[i] = softplus(p.rho[i]) * noise.eps[i];
  return dw;
}

}  // namespace

double softplus(double x) {
  // log(1 + e^x), stable for large |x|.
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  // log(e^y - 1)
  return y + std::log(-std::expm1(-y));
}

double kl_to_standard_normal(const PosteriorParams& p) {
  if (p.mean.shape != p.rho.shape)
    throw ShapeMismatch("posterior mean and rho must have identical shapes");
  double kl = 0.0;
  for (i64 i = 0; i < p.mean.size(); ++i) {
    const double m = p.mean[i];
    const double s = softplus(p.rho[i]);
    const double s2 = s * s;
    kl += 0.5 * (m * m + s2 - 1.0 - std::log(s2));
  }
  return kl;
}

KlGrads kl_to_standard_normal_backward(const PosteriorParams& p) {
  KlGrads g;
  g.mean_grad = Tensor(p.mean.shape);
  g.rho_grad = Tensor(p.rho.shape);
  for (i64 i = 0; i < p.mean.size(); ++i) {
    const double s = softplus(p.rho[i]);
    const double dkl_dsigma = s - 1.0 / s;
    const double dsigma_drho = 1.0 / (1.0 + std::exp(-p.rho[i]));
    g.mean_grad[i] = p.mean[i];
    g.rho_grad[i] = dkl_dsigma * dsigma_drho;
  }
  return g;
}

FlipoutNoise draw_flipout_noise(const std::vector<i64>& kernel_shape, i64 batch,
                                Rng& rng) {
  if (kernel_shape.size() != 5) throw ShapeMismatch("flipout: kernel must be rank 5");
  FlipoutNoise n;
  n.eps = Tensor(kernel_shape);
  for (i64 i = 0; i < n.eps.size(); ++i) n.eps[i] = rng.normal();
  const i64 ci = kernel_shape[3], co = kernel_shape[4];
  n.in_signs.resize(static_cast<std::size_t>(batch * ci));
  n.out_signs.resize(static_cast<std::size_t>(batch * co));
  for (auto& s : n.in_signs) s = rng.sign();
  for (auto& s : n.out_signs) s = rng.sign();
  return n;
}

Tensor bayes_conv3d_forward(const Tensor& x, const PosteriorParams& p,
                            const FlipoutNoise& noise) {
  Tensor y = conv3d_forward(x, p.mean, p.bias_mean);
  const Tensor dw = perturbation_kernel(p, noise);
  const Tensor x_signed = apply_channel_signs(x, noise.in_signs);
  Tensor pert = conv3d_forward(x_signed, dw, {});
  const Tensor pert_signed = apply_channel_signs(pert, noise.out_signs);
  for (i64 i = 0; i < y.size(); ++i) y[i] += pert_signed[i];
  return y;
}

BayesConvGrads bayes_conv3d_backward(const Tensor& x, const PosteriorParams& p,
                                     const FlipoutNoise& noise,
                                     const Tensor& upstream) {
  BayesConvGrads g;

  // Mean path: plain convolution with the mean kernel.
  LayerGrads mean_path = conv3d_backward(x, p.mean, upstream);
  g.mean_grad = std::move(mean_path.param_grads["kernel"]);
  const Tensor& bias_t = mean_path.param_grads["bias"];
  g.bias_grad.assign(bias_t.data.begin(), bias_t.data.end());
  g.input_grad = std::move(mean_path.input_grad);

  // Perturbation path: conv(x * s, dw) * r.
  const Tensor dw = perturbation_kernel(p, noise);
  const Tensor x_signed = apply_channel_signs(x, noise.in_signs);
  const Tensor up_signed = apply_channel_signs(upstream, noise.out_signs);
  LayerGrads pert_path = conv3d_backward(x_signed, dw, up_signed);

  const Tensor& dw_grad = pert_path.param_grads["kernel"];
  g.rho_grad = Tensor(p.rho.shape);
  for (i64 i = 0; i < g.rho_grad.size(); ++i) {
    const double dsigma_drho = 1.0 / (1.0 + std::exp(-p.rho[i]));
    g.rho_grad[i] = dw_grad[i] * noise.eps[i] * dsigma_drho;
  }
  const Tensor xs_grad = apply_channel_signs(pert_path.input_grad, noise.in_signs);
  for (i64 i = 0; i < g.input_grad.size(); ++i) g.input_grad[i] += xs_grad[i];
  return g;
}

BayesConvResult bayes_conv3d(const Tensor& x, const PosteriorParams& p, Rng& rng) {
  const FlipoutNoise noise = draw_flipout_noise(p.mean.shape, x.dim(0), rng);
  BayesConvResult r;
  r.y = bayes_conv3d_forward(x, p, noise);
  r.kl = kl_to_standard_normal(p);
  return r;
}

Tensor bayes_conv3d_mean(const Tensor& x, const PosteriorParams& p) {
  return conv3d_forward(x, p.mean, p.bias_mean);
}

}  // namespace uqvol
