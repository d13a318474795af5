#include "uqvol/model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <utility>

#include "uqvol/training.hpp"

namespace uqvol {

namespace {

constexpr int kEncStages = 4;
constexpr int kDecStages = 3;

i64 filters(const ArchConfig& cfg, int stage) {
  return i64{1} << (cfg.base_filter_exponent + stage);
}

void validate(const ArchConfig& cfg) {
  if (cfg.base_filter_exponent < 1)
    throw BadConfig("base_filter_exponent must be >= 1");
  if (cfg.groups < 1 || filters(cfg, 1) % cfg.groups != 0)
    throw BadConfig("groups must divide the stage-1 filter count");
  if (cfg.mode == Mode::mcdn && (cfg.dropout_rate < 0.0 || cfg.dropout_rate >= 1.0))
    throw BadConfig("dropout_rate must be in [0, 1)");
  if (cfg.init_sigma <= 0.0) throw BadConfig("init_sigma must be > 0");
}

std::vector<std::string> decoder_conv_paths(int stage) {
  const std::string p = "dec" + std::to_string(stage);
  return {p + "/conv1", p + "/conv2", p + "/conv3"};
}

std::vector<std::string> all_bayes_conv_paths() {
  std::vector<std::string> out;
  for (int j = 1; j <= kDecStages; ++j)
    for (auto& p : decoder_conv_paths(j)) out.push_back(p);
  out.push_back("head/conv");
  return out;
}

const std::vector<std::string> kDropoutSites = {"drop/bridge", "drop/dec1",
                                                "drop/dec2"};

struct EncStageTrace {
  Tensor conv1_in;
  Tensor t1;
  GroupNormCache gn1;
  Tensor n1;
  Tensor a1;
  Tensor t2;
  GroupNormCache gn2;
  Tensor n2;
  std::vector<i64> pool_argmax;
  std::vector<i64> pool_in_shape;
};

struct DecStageTrace {
  Tensor u;
  Tensor t1;
  GroupNormCache gn1;
  Tensor n1;
  Tensor a1;
  Tensor cat;
  Tensor t2;
  GroupNormCache gn2;
  Tensor n2;
  Tensor a2;
  Tensor t3;
  GroupNormCache gn3;
  Tensor n3;
};

struct Trace {
  std::vector<EncStageTrace> enc;
  std::vector<DecStageTrace> dec;
  Tensor head_in;
  Tensor sigmoid;
};

}  // namespace

Tensor& ModelState::param(const std::string& path) {
  auto it = index.find(path);
  if (it == index.end()) throw BadConfig("unknown parameter path: " + path);
  return params[it->second].value;
}

const Tensor& ModelState::param(const std::string& path) const {
  auto it = index.find(path);
  if (it == index.end()) throw BadConfig("unknown parameter path: " + path);
  return params[it->second].value;
}

bool ModelState::has_param(const std::string& path) const {
  return index.count(path) != 0;
}

i64 ModelState::param_count() const {
  i64 n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

ModelState build(const ArchConfig& cfg, Rng& rng) {
  validate(cfg);
  ModelState m;
  m.cfg = cfg;

  auto add = [&m](const std::string& path, Tensor t) {
    m.index[path] = m.params.size();
    m.params.push_back({path, std::move(t)});
  };
  auto normal_tensor = [&](const std::string& stream_key, std::vector<i64> shape,
                           double stddev) {
    Rng s = rng.split("init/" + stream_key);
    Tensor t(std::move(shape));
    for (i64 i = 0; i < t.size(); ++i) t[i] = stddev * s.normal();
    return t;
  };
  // Kernel-like init streams are keyed by the conv path only, so a bcnn
  // posterior mean and the matching mcdn kernel get identical draws.
  auto add_conv = [&](const std::string& path, i64 k, i64 ci, i64 co, bool bayes) {
    Tensor w = normal_tensor(path, {k, k, k, ci, co}, cfg.init_stddev);
    if (bayes) {
      add(path + "/mean", std::move(w));
      add(path + "/rho",
          Tensor::full({k, k, k, ci, co}, softplus_inverse(cfg.init_sigma)));
    } else {
      add(path + "/kernel", std::move(w));
    }
    add(path + "/bias", Tensor::zeros({co}));
  };
  auto add_norm = [&](const std::string& path, i64 c) {
    add(path + "/gamma", Tensor::full({c}, 1.0));
    add(path + "/beta", Tensor::zeros({c}));
  };

  const bool bayes = cfg.mode == Mode::bcnn;
  i64 ci = 1;
  for (int i = 1; i <= kEncStages; ++i) {
    const std::string p = "enc" + std::to_string(i);
    const i64 f = filters(cfg, i);
    add_conv(p + "/conv1", 3, ci, f, false);
    add_norm(p + "/norm1", f);
    add_conv(p + "/conv2", 3, f, f, false);
    add_norm(p + "/norm2", f);
    ci = f;
  }
  for (int j = 1; j <= kDecStages; ++j) {
    const std::string p = "dec" + std::to_string(j);
    const i64 out = filters(cfg, kEncStages - j);
    add_conv(p + "/conv1", 3, 2 * out, out, bayes);
    add_norm(p + "/norm1", out);
    add_conv(p + "/conv2", 3, 2 * out, out, bayes);
    add_norm(p + "/norm2", out);
    add_conv(p + "/conv3", 3, out, out, bayes);
    add_norm(p + "/norm3", out);
  }
  add_conv("head/conv", 1, filters(cfg, 1), 1, bayes);
  return m;
}

NoiseBundle draw_noise(const ModelState& m, i64 batch, Rng& rng) {
  NoiseBundle b;
  if (m.cfg.mode == Mode::bcnn) {
    for (const auto& path : all_bayes_conv_paths()) {
      const Tensor& mean = m.param(path + "/mean");
      b.flipout[path] = draw_flipout_noise(mean.shape, batch, rng);
    }
  } else if (m.cfg.dropout_rate > 0.0) {
    const i64 bridge_c = filters(m.cfg, kEncStages);
    b.dropout["drop/bridge"] =
        draw_dropout_mask(batch, bridge_c, m.cfg.dropout_rate, rng);
    for (int j = 1; j <= 2; ++j) {
      const i64 c = filters(m.cfg, kEncStages - j);
      b.dropout["drop/dec" + std::to_string(j)] =
          draw_dropout_mask(batch, c, m.cfg.dropout_rate, rng);
    }
  }
  return b;
}

namespace {

Tensor conv_apply(const ModelState& m, const std::string& path, const Tensor& in,
                  const NoiseBundle* noise, double* kl_accum) {
  if (m.has_param(path + "/mean")) {
    PosteriorParams p;
    p.mean = m.param(path + "/mean");
    p.rho = m.param(path + "/rho");
    const Tensor& bias = m.param(path + "/bias");
    p.bias_mean.assign(bias.data.begin(), bias.data.end());
    if (kl_accum) *kl_accum += kl_to_standard_normal(p);
    if (noise) return bayes_conv3d_forward(in, p, noise->flipout.at(path));
    return bayes_conv3d_mean(in, p);
  }
  return conv3d_forward(in, m.param(path + "/kernel"), m.param(path + "/bias").data);
}

Tensor norm_apply(const ModelState& m, const std::string& path, const Tensor& in,
                  GroupNormCache* cache) {
  return group_norm_forward(in, m.cfg.groups, m.param(path + "/gamma").data,
                            m.param(path + "/beta").data, m.cfg.norm_eps, cache);
}

Tensor maybe_dropout(const std::string& site, Tensor x,
                     const NoiseBundle* noise) {
  if (!noise) return x;
  auto it = noise->dropout.find(site);
  if (it == noise->dropout.end()) return x;
  return spatial_dropout_forward(x, it->second);
}

ForwardResult run_forward(const ModelState& m, const Tensor& x,
                          const NoiseBundle* noise, Trace* trace) {
  if (x.rank() != 5 || x.dim(4) != 1)
    throw BadShape("model input must be [batch, d, h, w, 1]");
  for (int a = 1; a <= 3; ++a) {
    if (x.dim(a) % 8 != 0)
      throw BadShape("model input spatial dims must be divisible by 8");
  }

  double kl = 0.0;
  if (trace) {
    trace->enc.resize(kEncStages);
    trace->dec.resize(kDecStages);
  }

  Tensor cur = x;
  std::vector<Tensor> skips;
  for (int i = 1; i <= kEncStages; ++i) {
    const std::string p = "enc" + std::to_string(i);
    EncStageTrace et;
    Tensor t1 = conv_apply(m, p + "/conv1", cur, noise, nullptr);
    if (trace) et.conv1_in = std::move(cur);
    Tensor n1 = norm_apply(m, p + "/norm1", t1, trace ? &et.gn1 : nullptr);
    if (trace) et.t1 = std::move(t1);
    Tensor a1 = relu_forward(n1);
    if (trace) et.n1 = std::move(n1);
    Tensor t2 = conv_apply(m, p + "/conv2", a1, noise, nullptr);
    if (trace) et.a1 = std::move(a1);
    Tensor n2 = norm_apply(m, p + "/norm2", t2, trace ? &et.gn2 : nullptr);
    if (trace) et.t2 = std::move(t2);
    Tensor a2 = relu_forward(n2);
    if (trace) et.n2 = std::move(n2);

    if (i < kEncStages) {
      MaxPoolResult pr = max_pool_forward(a2);
      if (trace) {
        et.pool_argmax = std::move(pr.argmax);
        et.pool_in_shape = a2.shape;
      }
      skips.push_back(std::move(a2));
      cur = std::move(pr.y);
    } else {
      cur = maybe_dropout("drop/bridge", std::move(a2), noise);
    }
    if (trace) (*trace).enc[static_cast<std::size_t>(i - 1)] = std::move(et);
  }

  for (int j = 1; j <= kDecStages; ++j) {
    const std::string p = "dec" + std::to_string(j);
    DecStageTrace dt;
    Tensor u = upsample_nn_forward(cur);
    Tensor t1 = conv_apply(m, p + "/conv1", u, noise, &kl);
    if (trace) dt.u = std::move(u);
    Tensor n1 = norm_apply(m, p + "/norm1", t1, trace ? &dt.gn1 : nullptr);
    if (trace) dt.t1 = std::move(t1);
    Tensor a1 = relu_forward(n1);
    if (trace) dt.n1 = std::move(n1);
    Tensor& skip = skips[static_cast<std::size_t>(kEncStages - 1 - j)];
    Tensor cat = concat_channels(a1, skip);
    if (trace) dt.a1 = std::move(a1);
    skip = Tensor();  // the concat result carries everything backward needs
    Tensor t2 = conv_apply(m, p + "/conv2", cat, noise, &kl);
    if (trace) dt.cat = std::move(cat);
    Tensor n2 = norm_apply(m, p + "/norm2", t2, trace ? &dt.gn2 : nullptr);
    if (trace) dt.t2 = std::move(t2);
    Tensor a2 = relu_forward(n2);
    if (trace) dt.n2 = std::move(n2);
    Tensor t3 = conv_apply(m, p + "/conv3", a2, noise, &kl);
    if (trace) dt.a2 = std::move(a2);
    Tensor n3 = norm_apply(m, p + "/norm3", t3, trace ? &dt.gn3 : nullptr);
    if (trace) dt.t3 = std::move(t3);
    Tensor a3 = relu_forward(n3);
    if (trace) dt.n3 = std::move(n3);
    if (j < kDecStages)
      cur = maybe_dropout("drop/dec" + std::to_string(j), std::move(a3), noise);
    else
      cur = std::move(a3);
    if (trace) (*trace).dec[static_cast<std::size_t>(j - 1)] = std::move(dt);
  }

  Tensor logits = conv_apply(m, "head/conv", cur, noise, &kl);
  if (trace) trace->head_in = std::move(cur);
  ForwardResult r;
  r.sigmoid = sigmoid_forward(logits);
  r.total_kl = m.cfg.mode == Mode::bcnn ? kl : 0.0;
  if (trace) trace->sigmoid = r.sigmoid;
  return r;
}

// Backward of one conv layer; accumulates parameter grads and returns the
// gradient w.r.t. the conv input.
Tensor conv_backprop(const ModelState& m, std::vector<Tensor>& grads,
                     const std::string& path, const Tensor& in, const Tensor& up,
                     const NoiseBundle* noise) {
  auto accum = [&](const std::string& param_path, const Tensor& g) {
    Tensor& slot = grads[m.index.at(param_path)];
    for (i64 i = 0; i < slot.size(); ++i) slot[i] += g[i];
  };
  if (m.has_param(path + "/mean")) {
    PosteriorParams p;
    p.mean = m.param(path + "/mean");
    p.rho = m.param(path + "/rho");
    const Tensor& bias = m.param(path + "/bias");
    p.bias_mean.assign(bias.data.begin(), bias.data.end());
    if (noise) {
      BayesConvGrads g = bayes_conv3d_backward(in, p, noise->flipout.at(path), up);
      accum(path + "/mean", g.mean_grad);
      accum(path + "/rho", g.rho_grad);
      Tensor bg({static_cast<i64>(g.bias_grad.size())});
      bg.data = g.bias_grad;
      accum(path + "/bias", bg);
      return std::move(g.input_grad);
    }
    LayerGrads g = conv3d_backward(in, p.mean, up);
    accum(path + "/mean", g.param_grads["kernel"]);
    accum(path + "/bias", g.param_grads["bias"]);
    return std::move(g.input_grad);
  }
  LayerGrads g = conv3d_backward(in, m.param(path + "/kernel"), up);
  accum(path + "/kernel", g.param_grads["kernel"]);
  accum(path + "/bias", g.param_grads["bias"]);
  return std::move(g.input_grad);
}

Tensor norm_backprop(const ModelState& m, std::vector<Tensor>& grads,
                     const std::string& path, const Tensor& in,
                     const GroupNormCache& cache, const Tensor& up) {
  LayerGrads g = group_norm_backward(in, m.cfg.groups, m.param(path + "/gamma").data,
                                     cache, up);
  Tensor& gg = grads[m.index.at(path + "/gamma")];
  Tensor& gb = grads[m.index.at(path + "/beta")];
  const Tensor& dg = g.param_grads["gamma"];
  const Tensor& db = g.param_grads["beta"];
  for (i64 i = 0; i < gg.size(); ++i) gg[i] += dg[i];
  for (i64 i = 0; i < gb.size(); ++i) gb[i] += db[i];
  return std::move(g.input_grad);
}

Tensor dropout_backprop(const NoiseBundle* noise, const std::string& site,
                        Tensor up) {
  if (!noise) return up;
  auto it = noise->dropout.find(site);
  if (it == noise->dropout.end()) return up;
  return spatial_dropout_backward(it->second, up);
}

}  // namespace

ForwardResult forward_with_noise(const ModelState& m, const Tensor& x,
                                 const NoiseBundle* noise) {
  return run_forward(m, x, noise, nullptr);
}

ForwardResult forward(const ModelState& m, const Tensor& x, Rng& rng,
                      bool stochastic) {
  if (!stochastic) return forward_with_noise(m, x, nullptr);
  const NoiseBundle noise = draw_noise(m, x.dim(0), rng);
  return forward_with_noise(m, x, &noise);
}

BackwardResult backward_with_noise(const ModelState& m, const Tensor& x,
                                   const Tensor& target, const LossScale& scale,
                                   const NoiseBundle* noise) {
  if (target.shape != std::vector<i64>{x.dim(0), x.dim(1), x.dim(2), x.dim(3), 1})
    throw ShapeMismatch("backward: target shape must match input");

  Trace trace;
  run_forward(m, x, noise, &trace);

  BackwardResult r;
  r.grads.reserve(m.params.size());
  for (const auto& p : m.params) r.grads.push_back(Tensor::zeros(p.value.shape));

  r.nll = nll_binary(trace.sigmoid, target);
  double kl = 0.0;

  // Fused sigmoid + binary cross-entropy gradient at the head logits.
  Tensor g(trace.sigmoid.shape);
  for (i64 i = 0; i < g.size(); ++i) g[i] = trace.sigmoid[i] - target[i];

  g = conv_backprop(m, r.grads, "head/conv", trace.head_in, g, noise);

  std::vector<Tensor> skip_grads(kEncStages - 1);
  for (int j = kDecStages; j >= 1; --j) {
    const std::string p = "dec" + std::to_string(j);
    DecStageTrace& dt = trace.dec[static_cast<std::size_t>(j - 1)];
    if (j < kDecStages)
      g = dropout_backprop(noise, "drop/dec" + std::to_string(j), std::move(g));
    g = relu_backward(dt.n3, g);
    g = norm_backprop(m, r.grads, p + "/norm3", dt.t3, dt.gn3, g);
    g = conv_backprop(m, r.grads, p + "/conv3", dt.a2, g, noise);
    g = relu_backward(dt.n2, g);
    g = norm_backprop(m, r.grads, p + "/norm2", dt.t2, dt.gn2, g);
    g = conv_backprop(m, r.grads, p + "/conv2", dt.cat, g, noise);
    auto [ga1, gskip] = split_channels(g, dt.a1.dim(4));
    skip_grads[static_cast<std::size_t>(kEncStages - 1 - j)] = std::move(gskip);
    g = relu_backward(dt.n1, ga1);
    g = norm_backprop(m, r.grads, p + "/norm1", dt.t1, dt.gn1, g);
    g = conv_backprop(m, r.grads, p + "/conv1", dt.u, g, noise);
    g = upsample_nn_backward(g);
  }

  for (int i = kEncStages; i >= 1; --i) {
    const std::string p = "enc" + std::to_string(i);
    EncStageTrace& et = trace.enc[static_cast<std::size_t>(i - 1)];
    if (i == kEncStages) {
      g = dropout_backprop(noise, "drop/bridge", std::move(g));
    } else {
      g = max_pool_backward(et.pool_argmax, et.pool_in_shape, g);
      const Tensor& sg = skip_grads[static_cast<std::size_t>(i - 1)];
      for (i64 k = 0; k < g.size(); ++k) g[k] += sg[k];
    }
    g = relu_backward(et.n2, g);
    g = norm_backprop(m, r.grads, p + "/norm2", et.t2, et.gn2, g);
    g = conv_backprop(m, r.grads, p + "/conv2", et.a1, g, noise);
    g = relu_backward(et.n1, g);
    g = norm_backprop(m, r.grads, p + "/norm1", et.t1, et.gn1, g);
    g = conv_backprop(m, r.grads, p + "/conv1", et.conv1_in, g, noise);
  }

  // KL term: closed-form value and gradients, weighted by k/M.
  const double w = scale.k_weight / static_cast<double>(scale.minibatches);
  if (m.cfg.mode == Mode::bcnn) {
    for (const auto& path : all_bayes_conv_paths()) {
      PosteriorParams p;
      p.mean = m.param(path + "/mean");
      p.rho = m.param(path + "/rho");
      kl += kl_to_standard_normal(p);
      KlGrads kg = kl_to_standard_normal_backward(p);
      Tensor& gm = r.grads[m.index.at(path + "/mean")];
      Tensor& gr = r.grads[m.index.at(path + "/rho")];
      for (i64 i = 0; i < gm.size(); ++i) gm[i] += w * kg.mean_grad[i];
      for (i64 i = 0; i < gr.size(); ++i) gr[i] += w * kg.rho_grad[i];
    }
  }
  r.kl = kl;
  r.loss = r.nll + w * kl;
  return r;
}

BackwardResult backward(const ModelState& m, const Tensor& x, const Tensor& target,
                        const LossScale& scale, Rng& rng) {
  const NoiseBundle noise = draw_noise(m, x.dim(0), rng);
  return backward_with_noise(m, x, target, scale, &noise);
}

double loss_with_noise(const ModelState& m, const Tensor& x, const Tensor& target,
                       const LossScale& scale, const NoiseBundle* noise) {
  const ForwardResult f = forward_with_noise(m, x, noise);
  const double w = scale.k_weight / static_cast<double>(scale.minibatches);
  return nll_binary(f.sigmoid, target) + w * f.total_kl;
}

std::function<Tensor(const Tensor&, Rng&)> make_sampler(const ModelState& m) {
  const ModelState* mp = &m;
  return [mp](const Tensor& batch, Rng& rng) {
    return forward(*mp, batch, rng, /*stochastic=*/true).sigmoid;
  };
}

Tensor tensor_from_labels(const std::vector<const LabelVolume*>& labels) {
  if (labels.empty()) throw EmptyDataset("tensor_from_labels: no labels");
  const auto& s = labels.front()->shape;
  for (const LabelVolume* l : labels) {
    if (l->shape != s) throw ShapeMismatch("tensor_from_labels: shapes differ");
  }
  Tensor t({static_cast<i64>(labels.size()), s[0], s[1], s[2], 1});
  i64 o = 0;
  for (const LabelVolume* l : labels)
    for (i64 i = 0; i < l->size(); ++i, ++o)
      t[o] = static_cast<double>(l->data[static_cast<std::size_t>(i)]);
  return t;
}

i64 expected_param_count(const CountAssumptions& a) {
  const auto f = [&a](int stage) { return i64{1} << (a.base_filter_exponent + stage); };
  const i64 k3 = static_cast<i64>(a.hidden_kernel) * a.hidden_kernel * a.hidden_kernel;
  const i64 u3 = static_cast<i64>(a.up_kernel) * a.up_kernel * a.up_kernel;
  const i64 h3 = static_cast<i64>(a.head_kernel) * a.head_kernel * a.head_kernel;

  i64 total = 0;
  i64 bayes_extra = 0;

  i64 ci = 1;
  for (int i = 1; i <= kEncStages; ++i) {
    const i64 fi = f(i);
    total += k3 * ci * fi + fi;  // conv1 + bias
    total += 2 * fi;             // norm1
    total += k3 * fi * fi + fi;  // conv2 + bias
    total += 2 * fi;             // norm2
    ci = fi;
  }
  for (int j = 1; j <= kDecStages; ++j) {
    const i64 out = f(kEncStages - j);
    total += u3 * (2 * out) * out + out;  // conv after upsample
    total += 2 * out;                     // norm1
    if (a.norm_after_concat) total += 2 * (2 * out);
    total += k3 * (2 * out) * out + out;  // conv after concat
    total += 2 * out;                     // norm2
    total += k3 * out * out + out;        // conv3
    total += 2 * out;                     // norm3
    bayes_extra += u3 * (2 * out) * out + k3 * (2 * out) * out + k3 * out * out;
  }
  total += h3 * f(1) * 1 + 1;  // head conv + bias
  if (a.norm_after_head) total += 2;
  bayes_extra += h3 * f(1) * 1;
  if (a.bayes_head_bias_mean_field) bayes_extra += 1;

  return a.bayesian_decoder ? total + bayes_extra : total;
}

std::string arch_to_json(const ArchConfig& cfg) {
  nlohmann::json j;
  j["mode"] = cfg.mode == Mode::bcnn ? "bcnn" : "mcdn";
  j["base_filter_exponent"] = cfg.base_filter_exponent;
  j["groups"] = cfg.groups;
  j["dropout_rate"] = cfg.dropout_rate;
  j["norm_eps"] = cfg.norm_eps;
  j["init_stddev"] = cfg.init_stddev;
  j["init_sigma"] = cfg.init_sigma;
  return j.dump();
}

ArchConfig arch_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw BadConfig(std::string("bad architecture json: ") + e.what());
  }
  ArchConfig cfg;
  const std::string mode = j.value("mode", "bcnn");
  if (mode == "bcnn") {
    cfg.mode = Mode::bcnn;
  } else if (mode == "mcdn") {
    cfg.mode = Mode::mcdn;
  } else {
    throw BadConfig("mode must be bcnn or mcdn");
  }
  cfg.base_filter_exponent = j.value("base_filter_exponent", 3);
  cfg.groups = j.value("groups", 4);
  cfg.dropout_rate = j.value("dropout_rate", 0.2);
  cfg.norm_eps = j.value("norm_eps", 1e-5);
  cfg.init_stddev = j.value("init_stddev", 0.05);
  cfg.init_sigma = j.value("init_sigma", 0.1);
  validate(cfg);
  return cfg;
}

}  // namespace uqvol
