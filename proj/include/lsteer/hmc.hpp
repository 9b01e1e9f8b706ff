#pragma once

// Hierarchical meta-controller forward path.
//
// Three trainable pieces sit on top of frozen features:
//   - a global gate: Linear -> BatchNorm -> ReLU -> Linear -> sigmoid over
//     the context vector, producing a per-sample intensity s in [0,1];
//   - K bias-free low-rank adapters: tanh(c W_down W_up), one per selected
//     expert head, producing steering vectors g in (-1,1)^d_head;
//   - element-wise rectification h' = h (x) (1 + s * g), then concatenation
//     of the K rectified expert vectors for the linear scorer.
//
// Ablation variants switch the rectification rule: `additive` uses h + s*g,
// `static_scaling` uses a learned context-free vector per expert, `no_gsg`
// forces s = 1, and `linear_probe` passes features through untouched.
// Components that a variant does not evaluate are stored but never read nor
// updated, so checkpoints keep a uniform layout across variants.
//
// Everything is templated on the scalar type: float in production, double
// for the finite-difference gradient oracle.

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "lsteer/common.hpp"

namespace lsteer {

enum class HmcVariant { full, no_gsg, additive, static_scaling, linear_probe };

inline const char* to_string(HmcVariant v) {
  switch (v) {
    case HmcVariant::full: return "full";
    case HmcVariant::no_gsg: return "no_gsg";
    case HmcVariant::additive: return "additive";
    case HmcVariant::static_scaling: return "static_scaling";
    case HmcVariant::linear_probe: return "linear_probe";
  }
  return "full";
}

inline HmcVariant hmc_variant_from_string(const std::string& s) {
  if (s == "full") return HmcVariant::full;
  if (s == "no_gsg") return HmcVariant::no_gsg;
  if (s == "additive") return HmcVariant::additive;
  if (s == "static_scaling") return HmcVariant::static_scaling;
  if (s == "linear_probe") return HmcVariant::linear_probe;
  throw usage_error("unknown variant '" + s + "'");
}

struct HmcConfig {
  int d_model = 3584;
  int d_hidden = 128;
  int d_head = 128;
  int k = 4;
  int r = 4;
  HmcVariant variant = HmcVariant::full;
};

inline void validate(const HmcConfig& c) {
  if (c.d_model <= 0 || c.d_hidden <= 0 || c.d_head <= 0 || c.r <= 0)
    throw usage_error("hmc config dimensions must be positive");
  if (c.k < 0) throw usage_error("hmc config k must be nonnegative");
  if (c.r > c.d_model) throw usage_error("adapter rank exceeds d_model");
}

// BatchNorm constants. The normalization uses biased batch variance; the
// running buffer stores the unbiased estimate; inference always normalizes
// with the running statistics.
constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

template <class T>
struct GsgParams {
  Mat<T> w1;                 // d_model x d_hidden
  std::vector<T> b1;         // d_hidden
  std::vector<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  std::vector<T> w2;         // d_hidden
  T b2 = T{0};
  T momentum = T(kBnMomentum);
  T eps = T(kBnEps);
};

template <class T>
struct LgmAdapter {
  Mat<T> w_down;  // d_model x r, bias-free
  Mat<T> w_up;    // r x d_head, bias-free
};

template <class T>
struct HmcParams {
  HmcConfig config;
  GsgParams<T> gsg;
  std::vector<LgmAdapter<T>> adapters;          // k entries, expert-order pairing
  std::vector<std::vector<T>> static_scale;     // k x d_head iff variant == static_scaling
  std::vector<T> scorer_w;                      // k * d_head
  T scorer_b = T{0};
};

// Visits every stored tensor in the canonical (checkpoint) field order:
// w1, b1, gamma, beta, running_mean, running_var, w2, b2, per-adapter
// (w_down, w_up), static_scale blocks when present, scorer_w, scorer_b.
// `trainable` is false only for the running statistics.
template <class Params, class Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn("gsg.w1", p.gsg.w1.data.data(), p.gsg.w1.size(), true);
  fn("gsg.b1", p.gsg.b1.data(), p.gsg.b1.size(), true);
  fn("gsg.gamma", p.gsg.gamma.data(), p.gsg.gamma.size(), true);
  fn("gsg.beta", p.gsg.beta.data(), p.gsg.beta.size(), true);
  fn("gsg.running_mean", p.gsg.running_mean.data(), p.gsg.running_mean.size(), false);
  fn("gsg.running_var", p.gsg.running_var.data(), p.gsg.running_var.size(), false);
  fn("gsg.w2", p.gsg.w2.data(), p.gsg.w2.size(), true);
  fn("gsg.b2", &p.gsg.b2, std::size_t{1}, true);
  for (std::size_t i = 0; i < p.adapters.size(); ++i) {
    const std::string tag = "adapter" + std::to_string(i);
    fn(tag + ".w_down", p.adapters[i].w_down.data.data(), p.adapters[i].w_down.size(), true);
    fn(tag + ".w_up", p.adapters[i].w_up.data.data(), p.adapters[i].w_up.size(), true);
  }
  for (std::size_t i = 0; i < p.static_scale.size(); ++i)
    fn("static_scale" + std::to_string(i), p.static_scale[i].data(),
       p.static_scale[i].size(), true);
  fn("scorer.w", p.scorer_w.data(), p.scorer_w.size(), true);
  fn("scorer.b", &p.scorer_b, std::size_t{1}, true);
}

template <class T>
std::int64_t count_trainable_elements(const HmcParams<T>& p) {
  std::int64_t n = 0;
  for_each_tensor(p, [&](const std::string&, const T*, std::size_t len, bool trainable) {
    if (trainable) n += static_cast<std::int64_t>(len);
  });
  return n;
}

// ---------------------------------------------------------------------------
// Initialization: weights uniform in (-1/sqrt(fan_in), +1/sqrt(fan_in)),
// biases zero, BN at identity, static scales at the multiplicative identity.

template <class T = float>
HmcParams<T> init_params(const HmcConfig& config, std::uint64_t seed) {
  validate(config);
  HmcParams<T> p;
  p.config = config;
  const auto dm = static_cast<std::size_t>(config.d_model);
  const auto dh = static_cast<std::size_t>(config.d_hidden);
  const auto dd = static_cast<std::size_t>(config.d_head);
  const auto r = static_cast<std::size_t>(config.r);
  const auto k = static_cast<std::size_t>(config.k);

  auto fill_uniform = [&](T* data, std::size_t n, double fan_in, std::string_view tag,
                          std::uint64_t idx) {
    RngStream rng = make_stream(seed, tag, idx);
    const double bound = 1.0 / std::sqrt(fan_in);
    for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(rng.next_symmetric(bound));
  };

  p.gsg.w1 = Mat<T>(dm, dh);
  fill_uniform(p.gsg.w1.data.data(), p.gsg.w1.size(), static_cast<double>(dm), "gsg.w1", 0);
  p.gsg.b1.assign(dh, T{0});
  p.gsg.gamma.assign(dh, T{1});
  p.gsg.beta.assign(dh, T{0});
  p.gsg.running_mean.assign(dh, T{0});
  p.gsg.running_var.assign(dh, T{1});
  p.gsg.w2.assign(dh, T{0});
  fill_uniform(p.gsg.w2.data(), dh, static_cast<double>(dh), "gsg.w2", 0);
  p.gsg.b2 = T{0};

  p.adapters.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    p.adapters[i].w_down = Mat<T>(dm, r);
    fill_uniform(p.adapters[i].w_down.data.data(), p.adapters[i].w_down.size(),
                 static_cast<double>(dm), "adapter.w_down", i);
    p.adapters[i].w_up = Mat<T>(r, dd);
    fill_uniform(p.adapters[i].w_up.data.data(), p.adapters[i].w_up.size(),
                 static_cast<double>(r), "adapter.w_up", i);
  }

  if (config.variant == HmcVariant::static_scaling)
    p.static_scale.assign(k, std::vector<T>(dd, T{1}));

  p.scorer_w.assign(k * dd, T{0});
  if (k > 0)
    fill_uniform(p.scorer_w.data(), p.scorer_w.size(), static_cast<double>(k * dd),
                 "scorer.w", 0);
  p.scorer_b = T{0};
  return p;
}

template <class T>
HmcParams<T> make_zero_like(const HmcParams<T>& p) {
  HmcParams<T> z = p;
  for_each_tensor(z, [](const std::string&, T* data, std::size_t n, bool) {
    std::fill(data, data + n, T{0});
  });
  return z;
}

// ---------------------------------------------------------------------------
// Forward passes

enum class ForwardMode { train, eval };

template <class T>
struct GsgCache {
  bool batch_stats = false;          // normalized with batch statistics
  Mat<T> a1;                         // B x H pre-norm activations
  std::vector<T> mean, inv_std;      // per-unit statistics actually used
  Mat<T> xhat;                       // normalized activations
  Mat<T> bn_out;                     // gamma * xhat + beta (ReLU mask source)
  Mat<T> relu_out;
  std::vector<T> s;                  // sigmoid outputs
};

namespace detail {

template <class T>
void check_finite(const T* data, std::size_t n, const char* what) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(static_cast<double>(data[i])))
      throw std::runtime_error(std::string("non-finite value in ") + what);
}

// One implementation serves the public contract and the trainer's
// small-trailing-batch rule (normalize with running stats, still trainable).
template <class T>
GsgCache<T> gsg_forward_impl(GsgParams<T>& gsg, const T* c, std::size_t batch,
                             std::size_t d_model, std::size_t d_hidden,
                             bool use_batch_stats, bool update_running) {
  check_finite(c, batch * d_model, "gsg input");
  GsgCache<T> cache;
  cache.batch_stats = use_batch_stats;
  cache.a1 = Mat<T>(batch, d_hidden);
  for (std::size_t b = 0; b < batch; ++b)
    std::copy(gsg.b1.begin(), gsg.b1.end(), cache.a1.row(b));
  matmul_add(c, batch, d_model, gsg.w1.data.data(), d_hidden, cache.a1.data.data());

  cache.mean.assign(d_hidden, T{0});
  cache.inv_std.assign(d_hidden, T{0});
  if (use_batch_stats) {
    std::vector<T> var(d_hidden, T{0});
    for (std::size_t b = 0; b < batch; ++b) {
      const T* row = cache.a1.row(b);
      for (std::size_t j = 0; j < d_hidden; ++j) cache.mean[j] += row[j];
    }
    for (std::size_t j = 0; j < d_hidden; ++j) cache.mean[j] /= static_cast<T>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* row = cache.a1.row(b);
      for (std::size_t j = 0; j < d_hidden; ++j) {
        const T diff = row[j] - cache.mean[j];
        var[j] += diff * diff;
      }
    }
    for (std::size_t j = 0; j < d_hidden; ++j) {
      var[j] /= static_cast<T>(batch);  // biased, used for normalization
      cache.inv_std[j] = T{1} / std::sqrt(var[j] + gsg.eps);
    }
    if (update_running) {
      const T m = gsg.momentum;
      const T unbias = static_cast<T>(batch) / static_cast<T>(batch - 1);
      for (std::size_t j = 0; j < d_hidden; ++j) {
        gsg.running_mean[j] = (T{1} - m) * gsg.running_mean[j] + m * cache.mean[j];
        gsg.running_var[j] = (T{1} - m) * gsg.running_var[j] + m * var[j] * unbias;
      }
    }
  } else {
    for (std::size_t j = 0; j < d_hidden; ++j) {
      cache.mean[j] = gsg.running_mean[j];
      cache.inv_std[j] = T{1} / std::sqrt(gsg.running_var[j] + gsg.eps);
    }
  }

  cache.xhat = Mat<T>(batch, d_hidden);
  cache.bn_out = Mat<T>(batch, d_hidden);
  cache.relu_out = Mat<T>(batch, d_hidden);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* a = cache.a1.row(b);
    T* xh = cache.xhat.row(b);
    T* bn = cache.bn_out.row(b);
    T* re = cache.relu_out.row(b);
    for (std::size_t j = 0; j < d_hidden; ++j) {
      xh[j] = (a[j] - cache.mean[j]) * cache.inv_std[j];
      bn[j] = gsg.gamma[j] * xh[j] + gsg.beta[j];
      re[j] = bn[j] > T{0} ? bn[j] : T{0};
    }
  }

  cache.s.assign(batch, T{0});
  for (std::size_t b = 0; b < batch; ++b) {
    const T* re = cache.relu_out.row(b);
    T z = gsg.b2;
    for (std::size_t j = 0; j < d_hidden; ++j) z += re[j] * gsg.w2[j];
    cache.s[b] = stable_sigmoid(z);
  }
  return cache;
}

}  // namespace detail

// Public gate forward. Train mode normalizes with batch statistics (B >= 2
// required) and folds them into the running buffers once per call; eval mode
// is a pure per-row map using the running statistics.
template <class T>
GsgCache<T> gsg_forward(GsgParams<T>& gsg, const Mat<T>& c_batch, ForwardMode mode,
                        bool update_running = true) {
  const bool train = mode == ForwardMode::train;
  if (train && c_batch.rows < 2)
    throw usage_error("gsg_forward: train mode needs a batch of at least 2");
  return detail::gsg_forward_impl(gsg, c_batch.data.data(), c_batch.rows, c_batch.cols,
                                  gsg.b1.size(), train, train && update_running);
}

template <class T>
struct LgmCache {
  Mat<T> u;  // B x r bottleneck
  Mat<T> g;  // B x d_head steering vectors
};

template <class T>
LgmCache<T> lgm_forward(const LgmAdapter<T>& adapter, const T* c, std::size_t batch,
                        std::size_t d_model) {
  detail::check_finite(c, batch * d_model, "lgm input");
  const std::size_t r = adapter.w_down.cols;
  const std::size_t d = adapter.w_up.cols;
  LgmCache<T> cache;
  cache.u = Mat<T>(batch, r);
  matmul_add(c, batch, d_model, adapter.w_down.data.data(), r, cache.u.data.data());
  cache.g = Mat<T>(batch, d);
  matmul_add(cache.u.data.data(), batch, r, adapter.w_up.data.data(), d,
             cache.g.data.data());
  for (T& x : cache.g.data) x = std::tanh(x);
  return cache;
}

template <class T>
LgmCache<T> lgm_forward(const LgmAdapter<T>& adapter, const Mat<T>& c_batch) {
  return lgm_forward(adapter, c_batch.data.data(), c_batch.rows, c_batch.cols);
}

// Per-sample rectification of K expert vectors. `h` and `g` are k x d_head;
// `static_scale` is consulted only by the static variant.
template <class T>
Mat<T> steer(const Mat<T>& h, T s_global, const Mat<T>& g, HmcVariant variant,
             const std::vector<std::vector<T>>* static_scale = nullptr) {
  if (variant != HmcVariant::linear_probe && variant != HmcVariant::static_scaling &&
      (g.rows != h.rows || g.cols != h.cols))
    throw usage_error("steer: shape mismatch between h and g");
  Mat<T> out = h;
  switch (variant) {
    case HmcVariant::full:
    case HmcVariant::no_gsg: {
      const T s = variant == HmcVariant::no_gsg ? T{1} : s_global;
      for (std::size_t i = 0; i < h.size(); ++i)
        out.data[i] = h.data[i] * (T{1} + s * g.data[i]);
      break;
    }
    case HmcVariant::additive:
      for (std::size_t i = 0; i < h.size(); ++i)
        out.data[i] = h.data[i] + s_global * g.data[i];
      break;
    case HmcVariant::static_scaling: {
      if (static_scale == nullptr || static_scale->size() != h.rows)
        throw usage_error("steer: static variant needs one scale vector per expert");
      for (std::size_t i = 0; i < h.rows; ++i) {
        const auto& v = (*static_scale)[i];
        if (v.size() != h.cols) throw usage_error("steer: static scale length mismatch");
        for (std::size_t j = 0; j < h.cols; ++j) out.at(i, j) = h.at(i, j) * v[j];
      }
      break;
    }
    case HmcVariant::linear_probe:
      break;
  }
  return out;
}

template <class T>
struct HmcCache {
  HmcVariant variant = HmcVariant::full;
  bool train_mode = false;
  std::size_t batch = 0;
  const T* c = nullptr;  // borrowed; must outlive the backward pass
  const T* h = nullptr;  // borrowed, B x (k*d_head)
  bool gsg_active = false;
  GsgCache<T> gsg;
  std::vector<LgmCache<T>> lgm;  // one per adapter when the LGM runs
  std::vector<T> s;              // effective steering intensity per row
  Mat<T> f_final;                // B x (k*d_head)
};

// Batched controller forward: gate, adapters, rectification, concatenation.
// `h_batch` rows hold the K expert vectors back to back in selected order.
// The returned cache borrows c/h; keep them alive until backward.
template <class T>
HmcCache<T> hmc_forward(HmcParams<T>& params, const Mat<T>& c_batch, const Mat<T>& h_batch,
                        ForwardMode mode, bool update_running = true) {
  const HmcConfig& cfg = params.config;
  const std::size_t batch = c_batch.rows;
  const auto dd = static_cast<std::size_t>(cfg.d_head);
  const auto k = static_cast<std::size_t>(cfg.k);
  if (h_batch.rows != batch || h_batch.cols != k * dd)
    throw usage_error("hmc_forward: h_batch shape mismatch");
  if (c_batch.cols != static_cast<std::size_t>(cfg.d_model))
    throw usage_error("hmc_forward: c_batch width mismatch");
  detail::check_finite(h_batch.data.data(), h_batch.size(), "expert features");

  HmcCache<T> cache;
  cache.variant = cfg.variant;
  cache.train_mode = mode == ForwardMode::train;
  cache.batch = batch;
  cache.c = c_batch.data.data();
  cache.h = h_batch.data.data();

  const bool uses_gsg =
      cfg.variant == HmcVariant::full || cfg.variant == HmcVariant::additive;
  const bool uses_lgm = uses_gsg || cfg.variant == HmcVariant::no_gsg;

  if (uses_gsg) {
    // A trailing batch of one cannot form batch statistics; it runs on the
    // running statistics but stays trainable.
    const bool batch_stats = cache.train_mode && batch >= 2;
    cache.gsg = detail::gsg_forward_impl(params.gsg, cache.c, batch,
                                         static_cast<std::size_t>(cfg.d_model),
                                         static_cast<std::size_t>(cfg.d_hidden),
                                         batch_stats,
                                         batch_stats && update_running);
    cache.gsg_active = true;
    cache.s = cache.gsg.s;
  } else if (cfg.variant == HmcVariant::no_gsg) {
    cache.s.assign(batch, T{1});
  } else {
    cache.s.assign(batch, T{0});  // quiescent: gate not evaluated
  }

  if (uses_lgm) {
    cache.lgm.reserve(k);
    for (std::size_t i = 0; i < k; ++i)
      cache.lgm.push_back(lgm_forward(params.adapters[i], cache.c, batch,
                                      static_cast<std::size_t>(cfg.d_model)));
  }

  cache.f_final = Mat<T>(batch, k * dd);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* hrow = cache.h + b * k * dd;
    T* out = cache.f_final.row(b);
    switch (cfg.variant) {
      case HmcVariant::full:
      case HmcVariant::no_gsg: {
        const T s = cache.s[b];
        for (std::size_t i = 0; i < k; ++i) {
          const T* grow = cache.lgm[i].g.row(b);
          for (std::size_t j = 0; j < dd; ++j)
            out[i * dd + j] = hrow[i * dd + j] * (T{1} + s * grow[j]);
        }
        break;
      }
      case HmcVariant::additive: {
        const T s = cache.s[b];
        for (std::size_t i = 0; i < k; ++i) {
          const T* grow = cache.lgm[i].g.row(b);
          for (std::size_t j = 0; j < dd; ++j)
            out[i * dd + j] = hrow[i * dd + j] + s * grow[j];
        }
        break;
      }
      case HmcVariant::static_scaling:
        for (std::size_t i = 0; i < k; ++i) {
          const auto& v = params.static_scale[i];
          for (std::size_t j = 0; j < dd; ++j) out[i * dd + j] = hrow[i * dd + j] * v[j];
        }
        break;
      case HmcVariant::linear_probe:
        std::copy(hrow, hrow + k * dd, out);
        break;
    }
  }
  return cache;
}

// Per-row view of the signals a forward produced: gate intensity in [0,1],
// steering vectors in [-1,1]^d_head, and the rectified expert features
// (each |h'| <= 2|h| elementwise for the multiplicative variants).
template <class T>
struct SteeringSignals {
  T s_global = T{0};
  Mat<T> g;        // k x d_head (zero where the adapters did not run)
  Mat<T> h_prime;  // k x d_head
};

template <class T>
SteeringSignals<T> steering_signals(const HmcCache<T>& cache, std::size_t row,
                                    std::size_t k, std::size_t d_head) {
  if (row >= cache.batch) throw usage_error("steering_signals: row out of range");
  SteeringSignals<T> out;
  out.s_global = cache.s[row];
  out.g = Mat<T>(k, d_head, T{0});
  for (std::size_t i = 0; i < cache.lgm.size(); ++i)
    std::copy_n(cache.lgm[i].g.row(row), d_head, out.g.row(i));
  out.h_prime = Mat<T>(k, d_head);
  for (std::size_t i = 0; i < k; ++i)
    std::copy_n(cache.f_final.row(row) + i * d_head, d_head, out.h_prime.row(i));
  return out;
}

// ---------------------------------------------------------------------------
// Parameter and FLOP accounting.
//
// FLOPs count 2 per weight element of every linear layer the variant
// evaluates, plus 2 per rectified feature element, plus 2 per scorer weight.
// Bias adds, normalization, and activations are not counted.

struct ParamCount {
  std::int64_t gsg = 0;
  std::int64_t lgm = 0;
  std::int64_t static_scale = 0;
  std::int64_t scorer = 0;
  std::int64_t total = 0;
  std::int64_t flops_per_inference = 0;
};

inline ParamCount param_count(const HmcConfig& c) {
  validate(c);
  const auto dm = static_cast<std::int64_t>(c.d_model);
  const auto dh = static_cast<std::int64_t>(c.d_hidden);
  const auto dd = static_cast<std::int64_t>(c.d_head);
  const auto r = static_cast<std::int64_t>(c.r);
  const auto k = static_cast<std::int64_t>(c.k);

  ParamCount out;
  out.gsg = dm * dh + dh + 2 * dh + dh + 1;  // w1, b1, gamma+beta, w2, b2
  out.lgm = k * (dm * r + r * dd);
  out.static_scale = c.variant == HmcVariant::static_scaling ? k * dd : 0;
  out.scorer = k * dd + 1;
  out.total = out.gsg + out.lgm + out.static_scale + out.scorer;

  const std::int64_t gsg_fl = 2 * (dm * dh + dh);
  const std::int64_t lgm_fl = 2 * k * (dm * r + r * dd);
  const std::int64_t steer_fl = 2 * k * dd;
  const std::int64_t scorer_fl = 2 * k * dd;
  switch (c.variant) {
    case HmcVariant::full:
    case HmcVariant::additive:
      out.flops_per_inference = gsg_fl + lgm_fl + steer_fl + scorer_fl;
      break;
    case HmcVariant::no_gsg:
      out.flops_per_inference = lgm_fl + steer_fl + scorer_fl;
      break;
    case HmcVariant::static_scaling:
      out.flops_per_inference = steer_fl + scorer_fl;
      break;
    case HmcVariant::linear_probe:
      out.flops_per_inference = scorer_fl;
      break;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint: [u32 header length][JSON header][f32 LE blob in visitor order].

constexpr int kCheckpointSchemaVersion = 1;

inline nlohmann::json hmc_config_to_json(const HmcConfig& c) {
  return {{"d_model", c.d_model}, {"d_hidden", c.d_hidden}, {"d_head", c.d_head},
          {"k", c.k},             {"r", c.r},               {"variant", to_string(c.variant)}};
}

inline HmcConfig hmc_config_from_json(const nlohmann::json& j) {
  HmcConfig c;
  c.d_model = j.at("d_model").get<int>();
  c.d_hidden = j.at("d_hidden").get<int>();
  c.d_head = j.at("d_head").get<int>();
  c.k = j.at("k").get<int>();
  c.r = j.at("r").get<int>();
  c.variant = hmc_variant_from_string(j.at("variant").get<std::string>());
  return c;
}

struct CheckpointInfo {
  std::uint64_t seed = 0;
  std::int64_t epoch = 0;
  std::vector<std::pair<int, int>> selected;  // (layer, head) in expert order
};

inline void save_checkpoint(const HmcParams<float>& params, const std::filesystem::path& path,
                            const CheckpointInfo& info) {
  std::size_t elements = 0;
  for_each_tensor(params, [&](const std::string&, const float*, std::size_t n, bool) {
    elements += n;
  });
  nlohmann::json selected = nlohmann::json::array();
  for (const auto& [l, h] : info.selected)
    selected.push_back({{"layer", l}, {"head", h}});
  nlohmann::json header{{"schema_version", kCheckpointSchemaVersion},
                        {"config", hmc_config_to_json(params.config)},
                        {"seed", info.seed},
                        {"epoch", info.epoch},
                        {"selected", selected},
                        {"blob_elements", elements}};
  const std::string htext = header.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write checkpoint " + path.string());
  const auto hlen = static_cast<std::uint32_t>(htext.size());
  out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
  out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
  for_each_tensor(params, [&](const std::string&, const float* data, std::size_t n, bool) {
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
  });
  if (!out) throw io_error("short write to checkpoint " + path.string());
}

inline std::pair<HmcParams<float>, CheckpointInfo> load_checkpoint(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot open checkpoint " + path.string());
  std::uint32_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
  std::string htext(hlen, '\0');
  in.read(htext.data(), hlen);
  if (!in) throw io_error("truncated checkpoint header in " + path.string());
  const nlohmann::json header = nlohmann::json::parse(htext);
  const int version = header.at("schema_version").get<int>();
  if (version != kCheckpointSchemaVersion)
    throw io_error("checkpoint schema_version " + std::to_string(version) + " unsupported");

  CheckpointInfo info;
  info.seed = header.at("seed").get<std::uint64_t>();
  info.epoch = header.at("epoch").get<std::int64_t>();
  if (header.contains("selected"))
    for (const auto& sj : header.at("selected"))
      info.selected.emplace_back(sj.at("layer").get<int>(), sj.at("head").get<int>());
  HmcParams<float> params = init_params<float>(hmc_config_from_json(header.at("config")), 0);

  std::size_t expected = 0;
  for_each_tensor(params, [&](const std::string&, float*, std::size_t n, bool) { expected += n; });
  if (header.at("blob_elements").get<std::size_t>() != expected)
    throw io_error("checkpoint blob size disagrees with config");
  for_each_tensor(params, [&](const std::string& name, float* data, std::size_t n, bool) {
    in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw io_error("truncated checkpoint blob at " + name);
  });
  return {std::move(params), info};
}

}  // namespace lsteer
