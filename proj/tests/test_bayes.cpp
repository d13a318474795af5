#include <doctest.h>

#include <cmath>

#include "support/grad_suite.hpp"
#include "support/oracles.hpp"
#include "uqvol/bayes.hpp"
#include "uqvol/rng.hpp"

using namespace uqvol;

namespace {

PosteriorParams single_weight(double mean, double sigma) {
  PosteriorParams p;
  p.mean = Tensor({1, 1, 1, 1, 1});
  p.mean[0] = mean;
  p.rho = Tensor({1, 1, 1, 1, 1});
  p.rho[0] = softplus_inverse(sigma);
  p.bias_mean = {0.0};
  return p;
}

// rho value whose softplus is exactly 1.0 in double precision.
double rho_for_unit_sigma() {
  double rho = softplus_inverse(1.0);
  for (int k = 0; k < 64; ++k) {
    if (softplus(rho) == 1.0) return rho;
    rho = softplus(rho) < 1.0 ? std::nextafter(rho, 1.0)
                              : std::nextafter(rho, 0.0);
  }
  return rho;
}

}  // namespace

TEST_CASE("softplus inverse round trips") {
  for (double y : {0.05, 0.1, 0.5, 1.0, 3.0}) {
    CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-12));
  }
}

TEST_CASE("kl: zero exactly at the prior, 0.5 for unit mean shift") {
  PosteriorParams p = single_weight(0.0, 1.0);
  p.rho[0] = rho_for_unit_sigma();
  REQUIRE(softplus(p.rho[0]) == 1.0);
  CHECK(kl_to_standard_normal(p) == 0.0);

  PosteriorParams q = single_weight(1.0, 1.0);
  q.rho[0] = rho_for_unit_sigma();
  CHECK(kl_to_standard_normal(q) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("kl: matches numerical quadrature over a random sweep") {
  Rng rng(21);
  for (int t = 0; t < 30; ++t) {
    const double mu = rng.uniform(-2.0, 2.0);
    const double sigma = rng.uniform(0.1, 3.0);
    const PosteriorParams p = single_weight(mu, sigma);
    const double closed = kl_to_standard_normal(p);
    const double quad = oracle::kl_quadrature(mu, sigma);
    CHECK(std::abs(closed - quad) < 1e-4);
  }
}

TEST_CASE("kl: nonnegative across random parameter settings") {
  Rng rng(22);
  for (int t = 0; t < 200; ++t) {
    const PosteriorParams p =
        single_weight(rng.uniform(-4.0, 4.0), rng.uniform(0.02, 5.0));
    CHECK(kl_to_standard_normal(p) >= 0.0);
  }
}

TEST_CASE("flipout: sigma -> 0 collapses to the deterministic mean conv") {
  Rng rng(23);
  const Tensor x = oracle::random_tensor({2, 4, 4, 4, 2}, rng);
  PosteriorParams p;
  p.mean = oracle::random_tensor({3, 3, 3, 2, 2}, rng, 0.5);
  p.rho = Tensor::full({3, 3, 3, 2, 2}, -60.0);  // softplus ~ 8.8e-27
  p.bias_mean = {0.3, -0.1};
  const FlipoutNoise noise = draw_flipout_noise(p.mean.shape, 2, rng);
  const Tensor y = bayes_conv3d_forward(x, p, noise);
  const Tensor want = bayes_conv3d_mean(x, p);
  for (i64 i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - want[i]) < 1e-12);
}

TEST_CASE("flipout: all-plus signs reduce to shared perturbation sampling") {
  Rng rng(24);
  const Tensor x = oracle::random_tensor({3, 2, 2, 2, 2}, rng);
  PosteriorParams p;
  p.mean = oracle::random_tensor({3, 3, 3, 2, 2}, rng, 0.3);
  p.rho = Tensor::full({3, 3, 3, 2, 2}, softplus_inverse(0.5));
  p.bias_mean = {0.0, 0.0};
  FlipoutNoise noise = draw_flipout_noise(p.mean.shape, 3, rng);
  for (auto& s : noise.in_signs) s = 1.0;
  for (auto& s : noise.out_signs) s = 1.0;
  const Tensor y = bayes_conv3d_forward(x, p, noise);

  // Same effective kernel for every example: mean + softplus(rho) * eps.
  Tensor shared = p.mean;
  for (i64 i = 0; i < shared.size(); ++i)
    shared[i] += softplus(p.rho[i]) * noise.eps[i];
  const Tensor want = conv3d_forward(x, shared, p.bias_mean);
  for (i64 i = 0; i < y.size(); ++i) CHECK(std::abs(y[i] - want[i]) < 1e-12);
}

TEST_CASE("flipout: per-example effective weight statistics over 10^4 draws") {
  // 1x1x1 conv, one channel, input 1: the output voxel equals the effective
  // weight of that example.
  const double mean = 0.37, sigma = 0.8;
  PosteriorParams p = single_weight(mean, sigma);
  const Tensor x = Tensor::full({2, 1, 1, 1, 1}, 1.0);
  Rng rng(25);
  const int draws = 10000;
  double sum = 0.0, sq = 0.0, cross = 0.0;
  for (int t = 0; t < draws; ++t) {
    const FlipoutNoise noise = draw_flipout_noise(p.mean.shape, 2, rng);
    const Tensor y = bayes_conv3d_forward(x, p, noise);
    sum += y[0];
    sq += y[0] * y[0];
    cross += (y[0] - mean) * (y[1] - mean);
  }
  const double est_mean = sum / draws;
  const double est_var = sq / draws - est_mean * est_mean;
  const double se_mean = sigma / std::sqrt(static_cast<double>(draws));
  CHECK(std::abs(est_mean - mean) < 3.0 * se_mean);
  CHECK(std::abs(est_var - sigma * sigma) < 0.05 * sigma * sigma);
  // distinct examples decorrelate
  const double corr = (cross / draws) / (sigma * sigma);
  CHECK(std::abs(corr) < 0.1);
}

TEST_CASE("flipout: identical inputs in one batch usually differ") {
  Rng rng(26);
  const Tensor x = Tensor::full({2, 2, 2, 2, 1}, 1.0);
  PosteriorParams p;
  p.mean = oracle::random_tensor({3, 3, 3, 1, 1}, rng, 0.3);
  p.rho = Tensor::full({3, 3, 3, 1, 1}, softplus_inverse(1.0));
  p.bias_mean = {0.0};
  int differing = 0;
  for (int t = 0; t < 50; ++t) {
    const BayesConvResult r = bayes_conv3d(x, p, rng);
    if (std::abs(r.y[0] - r.y[8]) > 1e-12) ++differing;
  }
  // With one in/out channel the sign products coincide half the time, so the
  // examples differ on roughly half the draws; they must differ on many.
  CHECK(differing >= 10);
}

TEST_CASE("flipout: mean of stochastic forwards converges to the mean conv") {
  Rng rng(27);
  const Tensor x = oracle::random_tensor({1, 2, 2, 2, 1}, rng);
  PosteriorParams p;
  p.mean = oracle::random_tensor({3, 3, 3, 1, 1}, rng, 0.4);
  p.rho = Tensor::full({3, 3, 3, 1, 1}, softplus_inverse(0.3));
  p.bias_mean = {0.1};
  const Tensor det = bayes_conv3d_mean(x, p);

  const int draws = 4000;
  Tensor acc = Tensor::zeros(det.shape);
  Tensor acc_sq = Tensor::zeros(det.shape);
  for (int t = 0; t < draws; ++t) {
    const BayesConvResult r = bayes_conv3d(x, p, rng);
    for (i64 i = 0; i < acc.size(); ++i) {
      acc[i] += r.y[i];
      acc_sq[i] += r.y[i] * r.y[i];
    }
  }
  for (i64 i = 0; i < acc.size(); ++i) {
    const double m = acc[i] / draws;
    const double var = acc_sq[i] / draws - m * m;
    const double se = std::sqrt(var / draws);
    CHECK(std::abs(m - det[i]) < 3.5 * se + 1e-9);
  }
}

TEST_CASE("flipout: frozen-noise gradients match finite differences") {
  CHECK(gradsuite::bayes_conv3d(5, 200) < 1e-4);
}

TEST_CASE("kl gradients match finite differences") {
  Rng rng(28);
  PosteriorParams p;
  p.mean = oracle::random_tensor({1, 1, 1, 2, 2}, rng, 0.8);
  p.rho = oracle::random_tensor({1, 1, 1, 2, 2}, rng, 0.5, -0.5);
  p.bias_mean = {0.0, 0.0};
  const KlGrads g = kl_to_standard_normal_backward(p);
  auto loss = [&]() { return kl_to_standard_normal(p); };
  CHECK(oracle::fd_max_rel_err(p.mean.data, loss, g.mean_grad.data) < 1e-4);
  CHECK(oracle::fd_max_rel_err(p.rho.data, loss, g.rho_grad.data) < 1e-4);
}
