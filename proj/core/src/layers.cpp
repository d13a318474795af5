#include "uqvol/layers.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <limits>

namespace uqvol {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;

struct ConvDims {
  i64 B, D, H, W, Ci;
  i64 kd, kh, kw, Co;
  i64 pd, ph, pw;  // "same" padding
  i64 taps() const { return kd * kh * kw; }
  i64 plane() const { return H * W; }
};

ConvDims conv_dims(const Tensor& x, const Tensor& kernel) {
  if (x.rank() != 5) throw ShapeMismatch("conv3d: input must be rank 5");
  if (kernel.rank() != 5) throw ShapeMismatch("conv3d: kernel must be rank 5");
  ConvDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4),
             kernel.dim(0), kernel.dim(1), kernel.dim(2), kernel.dim(4),
             0, 0, 0};
  if (kernel.dim(3) != d.Ci)
    throw ShapeMismatch("conv3d: kernel input channels do not match input");
  if (d.kd % 2 == 0 || d.kh % 2 == 0 || d.kw % 2 == 0)
    throw ShapeMismatch("conv3d: kernel extents must be odd");
  d.pd = d.kd / 2;
  d.ph = d.kh / 2;
  d.pw = d.kw / 2;
  return d;
}

// Gather one depth plane of output rows into a [H*W, taps*Ci] matrix.
void im2col_plane(const ConvDims& cd, const double* xb, i64 d_out, double* col) {
  const i64 row_len = cd.taps() * cd.Ci;
  const i64 cw = cd.Ci;
  for (i64 h = 0; h < cd.H; ++h) {
    for (i64 w = 0; w < cd.W; ++w) {
      double* row = col + (h * cd.W + w) * row_len;
      i64 t = 0;
      for (i64 a = 0; a < cd.kd; ++a) {
        const i64 sd = d_out + a - cd.pd;
        for (i64 b = 0; b < cd.kh; ++b) {
          const i64 sh = h + b - cd.ph;
          for (i64 c = 0; c < cd.kw; ++c, ++t) {
            const i64 sw = w + c - cd.pw;
            double* dst = row + t * cw;
            if (sd < 0 || sd >= cd.D || sh < 0 || sh >= cd.H || sw < 0 || sw >= cd.W) {
              std::memset(dst, 0, static_cast<std::size_t>(cw) * sizeof(double));
            } else {
              const double* src = xb + ((sd * cd.H + sh) * cd.W + sw) * cd.Ci;
              std::memcpy(dst, src, static_cast<std::size_t>(cw) * sizeof(double));
            }
          }
        }
      }
    }
  }
}

// Scatter-add a [H*W, taps*Ci] gradient plane back onto the input gradient.
void col2im_plane(const ConvDims& cd, const double* col, i64 d_out, double* xg) {
  const i64 row_len = cd.taps() * cd.Ci;
  const i64 cw = cd.Ci;
  for (i64 h = 0; h < cd.H; ++h) {
    for (i64 w = 0; w < cd.W; ++w) {
      const double* row = col + (h * cd.W + w) * row_len;
      i64 t = 0;
      for (i64 a = 0; a < cd.kd; ++a) {
        const i64 sd = d_out + a - cd.pd;
        for (i64 b = 0; b < cd.kh; ++b) {
          const i64 sh = h + b - cd.ph;
          for (i64 c = 0; c < cd.kw; ++c, ++t) {
            const i64 sw = w + c - cd.pw;
            if (sd < 0 || sd >= cd.D || sh < 0 || sh >= cd.H || sw < 0 || sw >= cd.W)
              continue;
            const double* src = row + t * cw;
            double* dst = xg + ((sd * cd.H + sh) * cd.W + sw) * cd.Ci;
            for (i64 ci = 0; ci < cw; ++ci) dst[ci] += src[ci];
          }
        }
      }
    }
  }
}

i64 channels_of(const Tensor& x) {
  if (x.rank() != 5) throw ShapeMismatch("expected rank-5 activation tensor");
  return x.dim(4);
}

}  // namespace

Tensor conv3d_forward(const Tensor& x, const Tensor& kernel,
                      const std::vector<double>& bias) {
  const ConvDims cd = conv_dims(x, kernel);
  if (!bias.empty() && static_cast<i64>(bias.size()) != cd.Co)
    throw ShapeMismatch("conv3d: bias length must equal output channels");

  Tensor out({cd.B, cd.D, cd.H, cd.W, cd.Co});
  const i64 row_len = cd.taps() * cd.Ci;
  std::vector<double> col(static_cast<std::size_t>(cd.plane() * row_len));
  ConstMapRM kmat(kernel.data.data(), row_len, cd.Co);

  const i64 xstride = cd.D * cd.H * cd.W * cd.Ci;
  const i64 ostride = cd.D * cd.H * cd.W * cd.Co;
  for (i64 b = 0; b < cd.B; ++b) {
    const double* xb = x.data.data() + b * xstride;
    for (i64 d = 0; d < cd.D; ++d) {
      im2col_plane(cd, xb, d, col.data());
      ConstMapRM cmat(col.data(), cd.plane(), row_len);
      MapRM omat(out.data.data() + b * ostride + d * cd.plane() * cd.Co,
                 cd.plane(), cd.Co);
      omat.noalias() = cmat * kmat;
    }
  }
  if (!bias.empty()) {
    double* o = out.data.data();
    const i64 voxels = cd.B * cd.D * cd.H * cd.W;
    for (i64 v = 0; v < voxels; ++v, o += cd.Co)
      for (i64 co = 0; co < cd.Co; ++co) o[co] += bias[static_cast<std::size_t>(co)];
  }
  return out;
}

LayerGrads conv3d_backward(const Tensor& x, const Tensor& kernel,
                           const Tensor& upstream) {
  const ConvDims cd = conv_dims(x, kernel);
  if (upstream.rank() != 5 || upstream.dim(0) != cd.B || upstream.dim(1) != cd.D ||
      upstream.dim(2) != cd.H || upstream.dim(3) != cd.W || upstream.dim(4) != cd.Co)
    throw ShapeMismatch("conv3d_backward: upstream shape mismatch");

  LayerGrads g;
  g.input_grad = Tensor::zeros(x.shape);
  Tensor kgrad = Tensor::zeros(kernel.shape);
  Tensor bgrad = Tensor::zeros({cd.Co});

  const i64 row_len = cd.taps() * cd.Ci;
  std::vector<double> col(static_cast<std::size_t>(cd.plane() * row_len));
  std::vector<double> colg(static_cast<std::size_t>(cd.plane() * row_len));
  ConstMapRM kmat(kernel.data.data(), row_len, cd.Co);
  MapRM kg(kgrad.data.data(), row_len, cd.Co);
  Eigen::Map<Eigen::VectorXd> bg(bgrad.data.data(), cd.Co);

  const i64 xstride = cd.D * cd.H * cd.W * cd.Ci;
  const i64 ostride = cd.D * cd.H * cd.W * cd.Co;
  for (i64 b = 0; b < cd.B; ++b) {
    const double* xb = x.data.data() + b * xstride;
    double* xg = g.input_grad.data.data() + b * xstride;
    for (i64 d = 0; d < cd.D; ++d) {
      im2col_plane(cd, xb, d, col.data());
      ConstMapRM cmat(col.data(), cd.plane(), row_len);
      ConstMapRM up(upstream.data.data() + b * ostride + d * cd.plane() * cd.Co,
                    cd.plane(), cd.Co);
      kg.noalias() += cmat.transpose() * up;
      bg.noalias() += up.colwise().sum().transpose();
      MapRM cg(colg.data(), cd.plane(), row_len);
      cg.noalias() = up * kmat.transpose();
      col2im_plane(cd, colg.data(), d, xg);
    }
  }
  g.param_grads["kernel"] = std::move(kgrad);
  g.param_grads["bias"] = std::move(bgrad);
  return g;
}

Tensor group_norm_forward(const Tensor& x, int groups,
                          const std::vector<double>& gamma,
                          const std::vector<double>& beta, double eps,
                          GroupNormCache* cache) {
  const i64 C = channels_of(x);
  if (groups < 1 || C % groups != 0)
    throw IndivisibleChannels("group_norm: channels must be divisible by groups");
  if (static_cast<i64>(gamma.size()) != C || static_cast<i64>(beta.size()) != C)
    throw ShapeMismatch("group_norm: gamma/beta length must equal channels");

  const i64 B = x.dim(0);
  const i64 spatial = x.dim(1) * x.dim(2) * x.dim(3);
  const i64 gc = C / groups;  // channels per group
  const i64 n = spatial * gc;

  Tensor y(x.shape);
  std::vector<double> mean(static_cast<std::size_t>(B * groups));
  std::vector<double> inv_std(static_cast<std::size_t>(B * groups));

  for (i64 b = 0; b < B; ++b) {
    const double* xb = x.data.data() + b * spatial * C;
    for (i64 g = 0; g < groups; ++g) {
      double sum = 0.0;
      for (i64 s = 0; s < spatial; ++s) {
        const double* p = xb + s * C + g * gc;
        for (i64 c = 0; c < gc; ++c) sum += p[c];
      }
      const double mu = sum / static_cast<double>(n);
      double ss = 0.0;
      for (i64 s = 0; s < spatial; ++s) {
        const double* p = xb + s * C + g * gc;
        for (i64 c = 0; c < gc; ++c) {
          const double d = p[c] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + eps);
      mean[static_cast<std::size_t>(b * groups + g)] = mu;
      inv_std[static_cast<std::size_t>(b * groups + g)] = inv;

      double* yb = y.data.data() + b * spatial * C;
      for (i64 s = 0; s < spatial; ++s) {
        const double* p = xb + s * C + g * gc;
        double* q = yb + s * C + g * gc;
        for (i64 c = 0; c < gc; ++c) {
          const i64 ch = g * gc + c;
          q[c] = gamma[static_cast<std::size_t>(ch)] * (p[c] - mu) * inv +
                 beta[static_cast<std::size_t>(ch)];
        }
      }
    }
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

LayerGrads group_norm_backward(const Tensor& x, int groups,
                               const std::vector<double>& gamma,
                               const GroupNormCache& cache,
                               const Tensor& upstream) {
  const i64 C = channels_of(x);
  if (upstream.shape != x.shape)
    throw ShapeMismatch("group_norm_backward: upstream shape mismatch");
  const i64 B = x.dim(0);
  const i64 spatial = x.dim(1) * x.dim(2) * x.dim(3);
  const i64 gc = C / groups;
  const i64 n = spatial * gc;

  LayerGrads g;
  g.input_grad = Tensor::zeros(x.shape);
  Tensor dgamma = Tensor::zeros({C});
  Tensor dbeta = Tensor::zeros({C});

  for (i64 b = 0; b < B; ++b) {
    const double* xb = x.data.data() + b * spatial * C;
    const double* ub = upstream.data.data() + b * spatial * C;
    double* ib = g.input_grad.data.data() + b * spatial * C;
    for (i64 gi = 0; gi < groups; ++gi) {
      const double mu = cache.mean[static_cast<std::size_t>(b * groups + gi)];
      const double inv = cache.inv_std[static_cast<std::size_t>(b * groups + gi)];

      // dxhat = upstream * gamma; accumulate sums needed for dx.
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (i64 s = 0; s < spatial; ++s) {
        const double* px = xb + s * C + gi * gc;
        const double* pu = ub + s * C + gi * gc;
        for (i64 c = 0; c < gc; ++c) {
          const i64 ch = gi * gc + c;
          const double xhat = (px[c] - mu) * inv;
          const double dxhat = pu[c] * gamma[static_cast<std::size_t>(ch)];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          dgamma[ch] += pu[c] * xhat;
          dbeta[ch] += pu[c];
        }
      }
      const double inv_n = 1.0 / static_cast<double>(n);
      for (i64 s = 0; s < spatial; ++s) {
        const double* px = xb + s * C + gi * gc;
        const double* pu = ub + s * C + gi * gc;
        double* pi = ib + s * C + gi * gc;
        for (i64 c = 0; c < gc; ++c) {
          const i64 ch = gi * gc + c;
          const double xhat = (px[c] - mu) * inv;
          const double dxhat = pu[c] * gamma[static_cast<std::size_t>(ch)];
          pi[c] = inv * (dxhat - inv_n * sum_dxhat - xhat * inv_n * sum_dxhat_xhat);
        }
      }
    }
  }
  g.param_grads["gamma"] = std::move(dgamma);
  g.param_grads["beta"] = std::move(dbeta);
  return g;
}

MaxPoolResult max_pool_forward(const Tensor& x) {
  if (x.rank() != 5) throw ShapeMismatch("max_pool: input must be rank 5");
  const i64 B = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  if (D % 2 || H % 2 || W % 2)
    throw OddSpatialDim("max_pool: spatial dims must be even");

  MaxPoolResult r;
  r.y = Tensor({B, D / 2, H / 2, W / 2, C});
  r.argmax.resize(static_cast<std::size_t>(r.y.size()));
  i64 o = 0;
  for (i64 b = 0; b < B; ++b)
    for (i64 d = 0; d < D / 2; ++d)
      for (i64 h = 0; h < H / 2; ++h)
        for (i64 w = 0; w < W / 2; ++w)
          for (i64 c = 0; c < C; ++c, ++o) {
            double best = -std::numeric_limits<double>::infinity();
            i64 best_idx = -1;
            for (i64 dz = 0; dz < 2; ++dz)
              for (i64 dy = 0; dy < 2; ++dy)
                for (i64 dx = 0; dx < 2; ++dx) {
                  const i64 idx = x.index5(b, 2 * d + dz, 2 * h + dy, 2 * w + dx, c);
                  if (x[idx] > best) {  // strict: first max wins ties
                    best = x[idx];
                    best_idx = idx;
                  }
                }
            r.y[o] = best;
            r.argmax[static_cast<std::size_t>(o)] = best_idx;
          }
  return r;
}

Tensor max_pool_backward(const std::vector<i64>& argmax,
                         const std::vector<i64>& input_shape,
                         const Tensor& upstream) {
  if (argmax.size() != static_cast<std::size_t>(upstream.size()))
    throw ShapeMismatch("max_pool_backward: argmax/upstream size mismatch");
  Tensor grad = Tensor::zeros(input_shape);
  for (i64 o = 0; o < upstream.size(); ++o)
    grad[argmax[static_cast<std::size_t>(o)]] += upstream[o];
  return grad;
}

Tensor upsample_nn_forward(const Tensor& x) {
  if (x.rank() != 5) throw ShapeMismatch("upsample: input must be rank 5");
  const i64 B = x.dim(0), D = x.dim(1), H = x.dim(2), W = x.dim(3), C = x.dim(4);
  Tensor y({B, 2 * D, 2 * H, 2 * W, C});
  for (i64 b = 0; b < B; ++b)
    for (i64 d = 0; d < 2 * D; ++d)
      for (i64 h = 0; h < 2 * H; ++h)
        for (i64 w = 0; w < 2 * W; ++w) {
          const double* src = &x.data[static_cast<std::size_t>(
              x.index5(b, d / 2, h / 2, w / 2, 0))];
          double* dst = &y.data[static_cast<std::size_t>(y.index5(b, d, h, w, 0))];
          std::memcpy(dst, src, static_cast<std::size_t>(C) * sizeof(double));
        }
  return y;
}

Tensor upsample_nn_backward(const Tensor& upstream) {
  if (upstream.rank() != 5) throw ShapeMismatch("upsample: upstream must be rank 5");
  const i64 B = upstream.dim(0), D = upstream.dim(1), H = upstream.dim(2),
            W = upstream.dim(3), C = upstream.dim(4);
  if (D % 2 || H % 2 || W % 2)
    throw OddSpatialDim("upsample backward: upstream spatial dims must be even");
  Tensor g({B, D / 2, H / 2, W / 2, C});
  for (i64 b = 0; b < B; ++b)
    for (i64 d = 0; d < D; ++d)
      for (i64 h = 0; h < H; ++h)
        for (i64 w = 0; w < W; ++w) {
          const double* src = &upstream.data[static_cast<std::size_t>(
              upstream.index5(b, d, h, w, 0))];
          double* dst = &g.data[static_cast<std::size_t>(
              g.index5(b, d / 2, h / 2, w / 2, 0))];
          for (i64 c = 0; c < C; ++c) dst[c] += src[c];
        }
  return g;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 5 || b.rank() != 5)
    throw ShapeMismatch("concat: inputs must be rank 5");
  for (int i = 0; i < 4; ++i) {
    if (a.dim(i) != b.dim(i))
      throw ShapeMismatch("concat: batch/spatial dims differ");
  }
  const i64 ca = a.dim(4), cb = b.dim(4);
  Tensor y({a.dim(0), a.dim(1), a.dim(2), a.dim(3), ca + cb});
  const i64 voxels = a.dim(0) * a.dim(1) * a.dim(2) * a.dim(3);
  for (i64 v = 0; v < voxels; ++v) {
    std::memcpy(y.data.data() + v * (ca + cb), a.data.data() + v * ca,
                static_cast<std::size_t>(ca) * sizeof(double));
    std::memcpy(y.data.data() + v * (ca + cb) + ca, b.data.data() + v * cb,
                static_cast<std::size_t>(cb) * sizeof(double));
  }
  return y;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& g, i64 a_channels) {
  if (g.rank() != 5) throw ShapeMismatch("split: input must be rank 5");
  const i64 ct = g.dim(4);
  if (a_channels < 0 || a_channels > ct)
    throw ShapeMismatch("split: bad channel split point");
  const i64 cb = ct - a_channels;
  Tensor a({g.dim(0), g.dim(1), g.dim(2), g.dim(3), a_channels});
  Tensor b({g.dim(0), g.dim(1), g.dim(2), g.dim(3), cb});
  const i64 voxels = g.dim(0) * g.dim(1) * g.dim(2) * g.dim(3);
  for (i64 v = 0; v < voxels; ++v) {
    std::memcpy(a.data.data() + v * a_channels, g.data.data() + v * ct,
                static_cast<std::size_t>(a_channels) * sizeof(double));
    std::memcpy(b.data.data() + v * cb, g.data.data() + v * ct + a_channels,
                static_cast<std::size_t>(cb) * sizeof(double));
  }
  return {std::move(a), std::move(b)};
}

Tensor sigmoid_forward(const Tensor& x) {
  Tensor y(x.shape);
  for (i64 i = 0; i < x.size(); ++i) {
    const double v = x[i];
    if (v >= 0.0) {
      y[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      y[i] = e / (1.0 + e);
    }
  }
  return y;
}

Tensor sigmoid_backward(const Tensor& y, const Tensor& upstream) {
  if (y.shape != upstream.shape)
    throw ShapeMismatch("sigmoid_backward: shape mismatch");
  Tensor g(y.shape);
  for (i64 i = 0; i < y.size(); ++i) g[i] = upstream[i] * y[i] * (1.0 - y[i]);
  return g;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y(x.shape);
  for (i64 i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
  return y;
}

Tensor relu_backward(const Tensor& x, const Tensor& upstream) {
  if (x.shape != upstream.shape) throw ShapeMismatch("relu_backward: shape mismatch");
  Tensor g(x.shape);
  for (i64 i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? upstream[i] : 0.0;
  return g;
}

DropoutMask draw_dropout_mask(i64 batch, i64 channels, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0)
    throw BadRate("spatial_dropout: rate must be in [0, 1)");
  DropoutMask m;
  m.keep.resize(static_cast<std::size_t>(batch * channels));
  m.scale = 1.0 / (1.0 - rate);
  for (auto& k : m.keep) k = rng.uniform() >= rate ? 1 : 0;
  return m;
}

Tensor spatial_dropout_forward(const Tensor& x, const DropoutMask& mask) {
  const i64 B = x.dim(0), C = channels_of(x);
  if (mask.keep.size() != static_cast<std::size_t>(B * C))
    throw ShapeMismatch("spatial_dropout: mask size mismatch");
  Tensor y(x.shape);
  const i64 spatial = x.dim(1) * x.dim(2) * x.dim(3);
  for (i64 b = 0; b < B; ++b)
    for (i64 s = 0; s < spatial; ++s) {
      const double* px = x.data.data() + (b * spatial + s) * C;
      double* py = y.data.data() + (b * spatial + s) * C;
      for (i64 c = 0; c < C; ++c)
        py[c] = mask.keep[static_cast<std::size_t>(b * C + c)] ? px[c] * mask.scale : 0.0;
    }
  return y;
}

Tensor spatial_dropout_backward(const DropoutMask& mask, const Tensor& upstream) {
  return spatial_dropout_forward(upstream, mask);
}

Tensor spatial_dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate == 0.0) return x;
  const DropoutMask m = draw_dropout_mask(x.dim(0), x.dim(4), rate, rng);
  return spatial_dropout_forward(x, m);
}

}  // namespace uqvol
