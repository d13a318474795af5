#include <doctest.h>

#include <cmath>

#include "support/grad_suite.hpp"
#include "support/oracles.hpp"
#include "uqvol/layers.hpp"
#include "uqvol/rng.hpp"

using namespace uqvol;

TEST_CASE("conv3d: 1x1x1 identity kernel passes the input through") {
  Rng rng(1);
  Tensor x = oracle::random_tensor({1, 3, 3, 3, 2}, rng);
  Tensor k = Tensor::zeros({1, 1, 1, 2, 2});
  k[0 * 2 + 0] = 1.0;  // [ci=0, co=0]
  k[1 * 2 + 1] = 1.0;  // [ci=1, co=1]
  const Tensor y = conv3d_forward(x, k, {0.0, 0.0});
  for (i64 i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv3d: zero kernel returns the bias per channel") {
  Rng rng(2);
  const Tensor x = oracle::random_tensor({2, 4, 2, 2, 3}, rng);
  const Tensor k = Tensor::zeros({3, 3, 3, 3, 2});
  const Tensor y = conv3d_forward(x, k, {1.5, -0.25});
  for (i64 i = 0; i < y.size(); i += 2) {
    CHECK(y[i] == 1.5);
    CHECK(y[i + 1] == -0.25);
  }
}

TEST_CASE("conv3d: matches the naive loop reference") {
  Rng rng(3);
  const Tensor x = oracle::random_tensor({1, 4, 4, 4, 2}, rng);
  const Tensor k = oracle::random_tensor({3, 3, 3, 2, 3}, rng);
  std::vector<double> bias{0.1, -0.2, 0.05};
  const Tensor got = conv3d_forward(x, k, bias);
  const Tensor want = oracle::conv3d_naive(x, k, bias);
  for (i64 i = 0; i < got.size(); ++i)
    CHECK(oracle::rel_err(got[i], want[i]) < 1e-5);
}

TEST_CASE("conv3d: zero upstream gives zero grads; bias grad sums upstream") {
  Rng rng(4);
  const Tensor x = oracle::random_tensor({1, 2, 2, 2, 2}, rng);
  const Tensor k = oracle::random_tensor({3, 3, 3, 2, 2}, rng);

  const LayerGrads zero = conv3d_backward(x, k, Tensor::zeros({1, 2, 2, 2, 2}));
  for (double v : zero.input_grad.data) CHECK(v == 0.0);
  for (double v : zero.param_grads.at("kernel").data) CHECK(v == 0.0);

  const Tensor up = oracle::random_tensor({1, 2, 2, 2, 2}, rng);
  const LayerGrads g = conv3d_backward(x, k, up);
  std::vector<double> sums(2, 0.0);
  for (i64 i = 0; i < up.size(); i += 2) {
    sums[0] += up[i];
    sums[1] += up[i + 1];
  }
  CHECK(g.param_grads.at("bias")[0] == doctest::Approx(sums[0]));
  CHECK(g.param_grads.at("bias")[1] == doctest::Approx(sums[1]));
}

TEST_CASE("conv3d: shape errors") {
  const Tensor x({1, 2, 2, 2, 2});
  CHECK_THROWS_AS(conv3d_forward(x, Tensor({3, 3, 3, 1, 2}), {}), ShapeMismatch);
  CHECK_THROWS_AS(conv3d_forward(x, Tensor({2, 3, 3, 2, 2}), {}), ShapeMismatch);
}

TEST_CASE("group_norm: constant input maps to beta") {
  std::vector<double> gamma{1.0, 1.0, 1.0, 1.0}, beta{0.0, 0.0, 0.0, 0.0};
  // dyadic constant: the group mean is exact, so (x - mean) is exactly zero
  const Tensor x = Tensor::full({1, 2, 2, 2, 4}, 2.5);
  const Tensor y = group_norm_forward(x, 4, gamma, beta, 1e-5);
  for (double v : y.data) CHECK(v == 0.0);

  const Tensor x2 = Tensor::full({1, 2, 2, 2, 4}, 3.7);
  const Tensor y2 = group_norm_forward(x2, 4, gamma, beta, 1e-5);
  for (double v : y2.data) CHECK(std::abs(v) < 1e-10);
}

TEST_CASE("group_norm: standardizes each group") {
  Rng rng(5);
  const Tensor x = oracle::random_tensor({2, 3, 3, 3, 8}, rng, 2.0, 1.0);
  std::vector<double> gamma(8, 1.0), beta(8, 0.0);
  const Tensor y = group_norm_forward(x, 4, gamma, beta, 1e-5);
  const i64 spatial = 27;
  for (i64 b = 0; b < 2; ++b) {
    for (int g = 0; g < 4; ++g) {
      double sum = 0.0, sq = 0.0;
      for (i64 s = 0; s < spatial; ++s)
        for (i64 c = 0; c < 2; ++c) {
          const double v = y.data[static_cast<std::size_t>((b * spatial + s) * 8 + g * 2 + c)];
          sum += v;
          sq += v * v;
        }
      const double n = static_cast<double>(spatial * 2);
      const double mean = sum / n;
      CHECK(std::abs(mean) < 1e-5);
      CHECK(std::abs(sq / n - mean * mean - 1.0) < 1e-3);
    }
  }
}

TEST_CASE("group_norm: scale invariance for var >> eps") {
  Rng rng(6);
  const Tensor x = oracle::random_tensor({1, 2, 2, 2, 4}, rng, 2.0);
  Tensor xs = x;
  for (auto& v : xs.data) v *= 7.5;
  std::vector<double> gamma(4, 1.0), beta(4, 0.0);
  const Tensor a = group_norm_forward(x, 4, gamma, beta, 1e-5);
  const Tensor b = group_norm_forward(xs, 4, gamma, beta, 1e-5);
  for (i64 i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-5);
}

TEST_CASE("group_norm: channels must divide by groups") {
  std::vector<double> gamma(6, 1.0), beta(6, 0.0);
  const Tensor x({1, 2, 2, 2, 6});
  CHECK_THROWS_AS(group_norm_forward(x, 4, gamma, beta, 1e-5), IndivisibleChannels);
}

TEST_CASE("max_pool: constant volume and tie routing") {
  const Tensor x = Tensor::full({1, 4, 4, 4, 1}, 2.5);
  const MaxPoolResult r = max_pool_forward(x);
  CHECK(r.y.shape == std::vector<i64>{1, 2, 2, 2, 1});
  for (double v : r.y.data) CHECK(v == 2.5);
  // ties break to the first window element in scan order
  CHECK(r.argmax[0] == x.index5(0, 0, 0, 0, 0));
  const Tensor up = Tensor::full({1, 2, 2, 2, 1}, 1.0);
  const Tensor g = max_pool_backward(r.argmax, x.shape, up);
  CHECK(g[x.index5(0, 0, 0, 0, 0)] == 1.0);
  CHECK(g[x.index5(0, 0, 0, 1, 0)] == 0.0);
}

TEST_CASE("max_pool: matches a loop oracle on random input") {
  Rng rng(7);
  const Tensor x = oracle::random_tensor({1, 4, 4, 4, 2}, rng);
  const MaxPoolResult r = max_pool_forward(x);
  for (i64 d = 0; d < 2; ++d)
    for (i64 h = 0; h < 2; ++h)
      for (i64 w = 0; w < 2; ++w)
        for (i64 c = 0; c < 2; ++c) {
          double best = -1e300;
          for (i64 a = 0; a < 2; ++a)
            for (i64 b = 0; b < 2; ++b)
              for (i64 e = 0; e < 2; ++e)
                best = std::max(best,
                                x[x.index5(0, 2 * d + a, 2 * h + b, 2 * w + e, c)]);
          CHECK(r.y[r.y.index5(0, d, h, w, c)] == best);
        }
}

TEST_CASE("max_pool: odd dims rejected") {
  CHECK_THROWS_AS(max_pool_forward(Tensor({1, 3, 4, 4, 1})), OddSpatialDim);
}

TEST_CASE("upsample: voxel becomes a 2x2x2 block; backward sums windows") {
  Tensor x({1, 1, 1, 1, 1});
  x[0] = 3.25;
  const Tensor y = upsample_nn_forward(x);
  CHECK(y.shape == std::vector<i64>{1, 2, 2, 2, 1});
  for (double v : y.data) CHECK(v == 3.25);
  const Tensor g = upsample_nn_backward(Tensor::full({1, 2, 2, 2, 1}, 1.0));
  CHECK(g[0] == 8.0);
}

TEST_CASE("upsample then max_pool is the identity on any volume") {
  Rng rng(8);
  const Tensor x = oracle::random_tensor({1, 2, 3, 2, 2}, rng);
  const MaxPoolResult r = max_pool_forward(upsample_nn_forward(x));
  for (i64 i = 0; i < x.size(); ++i) CHECK(r.y[i] == x[i]);
}

TEST_CASE("concat/split: empty side, round trip, and gradient ranges") {
  Rng rng(9);
  const Tensor a = oracle::random_tensor({1, 2, 2, 2, 3}, rng);
  const Tensor empty({1, 2, 2, 2, 0});
  const Tensor same = concat_channels(a, empty);
  CHECK(same.data == a.data);

  const Tensor b = oracle::random_tensor({1, 2, 2, 2, 2}, rng);
  const Tensor cat = concat_channels(a, b);
  const auto [ra, rb] = split_channels(cat, 3);
  CHECK(ra.data == a.data);
  CHECK(rb.data == b.data);
}

TEST_CASE("sigmoid: midpoint, saturation, and derivative") {
  Tensor x({1, 1, 1, 1, 3});
  x.data = {0.0, 30.0, -30.0};
  const Tensor y = sigmoid_forward(x);
  CHECK(y[0] == 0.5);
  CHECK(y[1] > 0.999999);
  CHECK(y[2] < 0.000001);

  // monotone saturation
  Tensor xs({1, 1, 1, 1, 5});
  xs.data = {-4.0, -2.0, 0.0, 2.0, 4.0};
  const Tensor ys = sigmoid_forward(xs);
  for (i64 i = 1; i < 5; ++i) CHECK(ys[i] > ys[i - 1]);
}

TEST_CASE("spatial_dropout: rate 0 is the identity") {
  Rng rng(10);
  const Tensor x = oracle::random_tensor({2, 2, 2, 2, 3}, rng);
  const Tensor y = spatial_dropout(x, 0.0, rng);
  CHECK(y.data == x.data);
}

TEST_CASE("spatial_dropout: whole channels drop and survivors rescale") {
  Rng rng(11);
  const Tensor x = Tensor::full({1, 2, 2, 2, 8}, 1.0);
  const DropoutMask mask = draw_dropout_mask(1, 8, 0.5, rng);
  const Tensor y = spatial_dropout_forward(x, mask);
  for (i64 c = 0; c < 8; ++c) {
    const bool keep = mask.keep[static_cast<std::size_t>(c)] != 0;
    for (i64 s = 0; s < 8; ++s) {
      const double v = y.data[static_cast<std::size_t>(s * 8 + c)];
      CHECK(v == (keep ? 2.0 : 0.0));
    }
  }
}

TEST_CASE("spatial_dropout: empirical drop rate over 10000 draws") {
  Rng rng(12);
  const double rate = 0.3;
  i64 dropped = 0, total = 0;
  for (int t = 0; t < 1250; ++t) {
    const DropoutMask m = draw_dropout_mask(1, 8, rate, rng);
    for (auto k : m.keep) {
      dropped += k ? 0 : 1;
      ++total;
    }
  }
  CHECK(total == 10000);
  const double freq = static_cast<double>(dropped) / static_cast<double>(total);
  CHECK(std::abs(freq - rate) < 0.02);
}

TEST_CASE("spatial_dropout: bad rate rejected") {
  Rng rng(13);
  const Tensor x({1, 2, 2, 2, 2});
  CHECK_THROWS_AS(spatial_dropout(x, 1.0, rng), BadRate);
  CHECK_THROWS_AS(spatial_dropout(x, -0.1, rng), BadRate);
}

TEST_CASE("gradient suite: every layer within 1e-4 of central differences") {
  CHECK(gradsuite::conv3d(5, 100) < 1e-4);
  CHECK(gradsuite::group_norm(5, 101) < 1e-4);
  CHECK(gradsuite::max_pool(5, 102) < 1e-4);
  CHECK(gradsuite::upsample(5, 103) < 1e-4);
  CHECK(gradsuite::concat(5, 104) < 1e-4);
  CHECK(gradsuite::sigmoid(5, 105) < 1e-6);
  CHECK(gradsuite::relu(5, 106) < 1e-4);
  CHECK(gradsuite::spatial_dropout(5, 107) < 1e-4);
}

TEST_CASE("forward passes are pure: same seed, same output") {
  Rng r1(55), r2(55);
  const Tensor x = oracle::random_tensor({2, 2, 2, 2, 4}, r1);
  const Tensor x2 = oracle::random_tensor({2, 2, 2, 2, 4}, r2);
  CHECK(x.data == x2.data);
  Rng d1(66), d2(66);
  const Tensor y1 = spatial_dropout(x, 0.4, d1);
  const Tensor y2 = spatial_dropout(x2, 0.4, d2);
  CHECK(y1.data == y2.data);
}
