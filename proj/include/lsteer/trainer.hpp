#pragma once

// Training for the meta-controller and scorer: composite loss (BCE over all
// samples plus an L2 penalty on the gate output over normal samples),
// hand-derived gradients for the whole graph, bias-corrected Adam, the
// mini-batch loop, and a central-difference gradient checker.
//
// Gradients flow to the controller and scorer only; context vectors and
// expert features are frozen inputs and never receive updates.

#include <span>

#include "lsteer/featurebank.hpp"
#include "lsteer/hmc.hpp"

namespace lsteer {

enum class LossReduction { mean, sum };

inline const char* to_string(LossReduction r) {
  return r == LossReduction::mean ? "mean" : "sum";
}

inline LossReduction loss_reduction_from_string(const std::string& s) {
  if (s == "mean") return LossReduction::mean;
  if (s == "sum") return LossReduction::sum;
  throw usage_error("unknown loss reduction '" + s + "'");
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int epochs = 1000;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double lambda_reg = 0.1;
  AdamConfig adam;
  std::uint64_t shuffle_seed = 0;
  // `mean` averages the BCE over the batch and the penalty over the batch's
  // normal samples; `sum` accumulates both per sample.
  LossReduction loss_reduction = LossReduction::mean;
};

inline void validate(const TrainConfig& c) {
  if (c.epochs < 0) throw usage_error("epochs must be nonnegative");
  if (c.batch_size < 1) throw usage_error("batch_size must be positive");
  if (!(c.learning_rate > 0.0)) throw usage_error("learning_rate must be positive");
  if (c.lambda_reg < 0.0) throw usage_error("lambda_reg must be nonnegative");
}

// Probabilities are clamped to [1e-7, 1-1e-7] inside the loss only, keeping
// the logs finite; gradients are taken on the clamped value.
constexpr double kProbClamp = 1e-7;

template <class T>
struct LossParts {
  T bce = T{0};
  T reg = T{0};
  T total = T{0};
};

template <class T>
LossParts<T> loss(std::span<const T> p, std::span<const int> y, std::span<const T> s_global,
                  double lambda_reg, LossReduction reduction) {
  if (p.empty()) throw usage_error("loss: empty batch");
  if (p.size() != y.size() || p.size() != s_global.size())
    throw usage_error("loss: batch length mismatch");
  const T lo = static_cast<T>(kProbClamp);
  const T hi = T{1} - static_cast<T>(kProbClamp);

  T bce = T{0}, reg = T{0};
  std::size_t n_norm = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T pc = std::clamp(p[i], lo, hi);
    bce -= y[i] == 1 ? std::log(pc) : std::log(T{1} - pc);
    if (y[i] == 0) {
      reg += s_global[i] * s_global[i];
      ++n_norm;
    }
  }
  if (reduction == LossReduction::mean) {
    bce /= static_cast<T>(p.size());
    if (n_norm > 0) reg /= static_cast<T>(n_norm);
  }
  LossParts<T> out;
  out.bce = bce;
  out.reg = reg;
  out.total = bce + static_cast<T>(lambda_reg) * reg;
  return out;
}

// ---------------------------------------------------------------------------
// Forward to loss, keeping everything backward needs.

template <class T>
struct BatchForward {
  HmcCache<T> cache;
  std::vector<T> logits;
  std::vector<T> probs;
  LossParts<T> loss;
};

template <class T>
BatchForward<T> forward_loss(HmcParams<T>& params, const Mat<T>& c_batch,
                             const Mat<T>& h_batch, std::span<const int> y,
                             const TrainConfig& tcfg, ForwardMode mode,
                             bool update_running = true) {
  BatchForward<T> out;
  out.cache = hmc_forward(params, c_batch, h_batch, mode, update_running);
  const std::size_t batch = out.cache.batch;
  out.logits.resize(batch);
  const std::size_t width = out.cache.f_final.cols;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* f = out.cache.f_final.row(b);
    T z = params.scorer_b;
    for (std::size_t j = 0; j < width; ++j) z += f[j] * params.scorer_w[j];
    out.logits[b] = z;
  }
  out.probs.resize(batch);
  for (std::size_t b = 0; b < batch; ++b) out.probs[b] = stable_sigmoid(out.logits[b]);
  out.loss = loss<T>(out.probs, y, out.cache.s, tcfg.lambda_reg, tcfg.loss_reduction);
  return out;
}

// ---------------------------------------------------------------------------
// Analytic gradients of the total loss for every trainable parameter the
// variant evaluates; untouched components come back zero. The gate intensity
// s receives gradient both through the rectification product and through the
// penalty term.

template <class T>
HmcParams<T> backward(const HmcParams<T>& params, const BatchForward<T>& fwd,
                      std::span<const int> y, const TrainConfig& tcfg) {
  const HmcCache<T>& cache = fwd.cache;
  if (!cache.train_mode)
    throw usage_error("backward requires a train-mode forward cache");
  const HmcConfig& cfg = params.config;
  const std::size_t batch = cache.batch;
  const auto dd = static_cast<std::size_t>(cfg.d_head);
  const auto dm = static_cast<std::size_t>(cfg.d_model);
  const auto dh = static_cast<std::size_t>(cfg.d_hidden);
  const auto k = static_cast<std::size_t>(cfg.k);
  const bool mean_red = tcfg.loss_reduction == LossReduction::mean;

  HmcParams<T> grads = make_zero_like(params);

  // d(total)/d(logit) with the clamp treated as the identity.
  const T lo = static_cast<T>(kProbClamp);
  const T hi = T{1} - static_cast<T>(kProbClamp);
  const T bce_factor = mean_red ? T{1} / static_cast<T>(batch) : T{1};
  std::vector<T> dz(batch);
  std::size_t n_norm = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T p = fwd.probs[b];
    const T pc = std::clamp(p, lo, hi);
    T g = pc - static_cast<T>(y[b]);
    if (pc != p) g *= p * (T{1} - p) / (pc * (T{1} - pc));
    dz[b] = bce_factor * g;
    if (y[b] == 0) ++n_norm;
  }

  // Scorer.
  const std::size_t width = k * dd;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* f = cache.f_final.row(b);
    const T d = dz[b];
    grads.scorer_b += d;
    for (std::size_t j = 0; j < width; ++j) grads.scorer_w[j] += d * f[j];
  }

  // d(total)/dF.
  Mat<T> df(batch, width);
  for (std::size_t b = 0; b < batch; ++b) {
    T* row = df.row(b);
    const T d = dz[b];
    for (std::size_t j = 0; j < width; ++j) row[j] = d * params.scorer_w[j];
  }

  std::vector<T> ds(batch, T{0});
  const bool uses_gsg =
      cfg.variant == HmcVariant::full || cfg.variant == HmcVariant::additive;
  const bool uses_lgm = uses_gsg || cfg.variant == HmcVariant::no_gsg;

  if (uses_lgm) {
    Mat<T> dg(batch, dd);
    for (std::size_t i = 0; i < k; ++i) {
      const LgmCache<T>& lc = cache.lgm[i];
      for (std::size_t b = 0; b < batch; ++b) {
        const T* dfrow = df.row(b) + i * dd;
        const T* hrow = cache.h + b * width + i * dd;
        const T* grow = lc.g.row(b);
        const T s = cache.s[b];
        T* dgrow = dg.row(b);
        if (cfg.variant == HmcVariant::additive) {
          for (std::size_t j = 0; j < dd; ++j) dgrow[j] = dfrow[j] * s;
          if (uses_gsg) {
            T acc = T{0};
            for (std::size_t j = 0; j < dd; ++j) acc += dfrow[j] * grow[j];
            ds[b] += acc;
          }
        } else {  // full / no_gsg: h' = h (x) (1 + s*g)
          for (std::size_t j = 0; j < dd; ++j) dgrow[j] = dfrow[j] * hrow[j] * s;
          if (uses_gsg) {
            T acc = T{0};
            for (std::size_t j = 0; j < dd; ++j) acc += dfrow[j] * hrow[j] * grow[j];
            ds[b] += acc;
          }
        }
      }
      // tanh and the two bias-free linears.
      Mat<T> dzg = dg;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* grow = lc.g.row(b);
        T* zrow = dzg.row(b);
        for (std::size_t j = 0; j < dd; ++j) zrow[j] *= T{1} - grow[j] * grow[j];
      }
      const auto r = static_cast<std::size_t>(cfg.r);
      outer_accumulate(lc.u.data.data(), batch, r, dzg.data.data(), dd,
                       grads.adapters[i].w_up.data.data());
      Mat<T> du(batch, r);
      const Mat<T>& w_up = params.adapters[i].w_up;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* zrow = dzg.row(b);
        T* urow = du.row(b);
        for (std::size_t q = 0; q < r; ++q) {
          const T* wrow = w_up.row(q);
          T acc = T{0};
          for (std::size_t j = 0; j < dd; ++j) acc += zrow[j] * wrow[j];
          urow[q] = acc;
        }
      }
      outer_accumulate(cache.c, batch, dm, du.data.data(), r,
                       grads.adapters[i].w_down.data.data());
    }
  } else if (cfg.variant == HmcVariant::static_scaling) {
    for (std::size_t i = 0; i < k; ++i) {
      auto& dv = grads.static_scale[i];
      for (std::size_t b = 0; b < batch; ++b) {
        const T* dfrow = df.row(b) + i * dd;
        const T* hrow = cache.h + b * width + i * dd;
        for (std::size_t j = 0; j < dd; ++j) dv[j] += dfrow[j] * hrow[j];
      }
    }
  }

  if (uses_gsg) {
    // Penalty term: d/ds of lambda * reduce_{y=0}(s^2).
    const T reg_factor = mean_red && n_norm > 0 ? T{1} / static_cast<T>(n_norm) : T{1};
    for (std::size_t b = 0; b < batch; ++b)
      if (y[b] == 0)
        ds[b] += static_cast<T>(tcfg.lambda_reg) * T{2} * cache.s[b] * reg_factor;

    const GsgCache<T>& gc = cache.gsg;
    std::vector<T> dz2(batch);
    for (std::size_t b = 0; b < batch; ++b)
      dz2[b] = ds[b] * gc.s[b] * (T{1} - gc.s[b]);

    Mat<T> dbn(batch, dh);
    for (std::size_t b = 0; b < batch; ++b) {
      const T d2 = dz2[b];
      const T* re = gc.relu_out.row(b);
      const T* bn = gc.bn_out.row(b);
      T* row = dbn.row(b);
      grads.gsg.b2 += d2;
      for (std::size_t j = 0; j < dh; ++j) {
        grads.gsg.w2[j] += d2 * re[j];
        row[j] = bn[j] > T{0} ? d2 * params.gsg.w2[j] : T{0};
      }
    }

    Mat<T> da1(batch, dh);
    for (std::size_t b = 0; b < batch; ++b) {
      const T* xh = gc.xhat.row(b);
      const T* row = dbn.row(b);
      for (std::size_t j = 0; j < dh; ++j) {
        grads.gsg.gamma[j] += row[j] * xh[j];
        grads.gsg.beta[j] += row[j];
      }
    }
    if (gc.batch_stats) {
      // Fused train-mode BatchNorm backward (biased variance).
      std::vector<T> sum_dx(dh, T{0}), sum_dx_xhat(dh, T{0});
      for (std::size_t b = 0; b < batch; ++b) {
        const T* row = dbn.row(b);
        const T* xh = gc.xhat.row(b);
        for (std::size_t j = 0; j < dh; ++j) {
          const T dxh = row[j] * params.gsg.gamma[j];
          sum_dx[j] += dxh;
          sum_dx_xhat[j] += dxh * xh[j];
        }
      }
      const T invB = T{1} / static_cast<T>(batch);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* row = dbn.row(b);
        const T* xh = gc.xhat.row(b);
        T* out = da1.row(b);
        for (std::size_t j = 0; j < dh; ++j) {
          const T dxh = row[j] * params.gsg.gamma[j];
          out[j] = gc.inv_std[j] * (dxh - sum_dx[j] * invB - xh[j] * sum_dx_xhat[j] * invB);
        }
      }
      // A uniform pre-normalization shift cancels against the batch mean, so
      // b1 has an identically zero gradient here; leave it at zero instead of
      // accumulating floating-point residue.
    } else {
      for (std::size_t b = 0; b < batch; ++b) {
        const T* row = dbn.row(b);
        T* out = da1.row(b);
        for (std::size_t j = 0; j < dh; ++j)
          out[j] = row[j] * params.gsg.gamma[j] * gc.inv_std[j];
      }
      for (std::size_t b = 0; b < batch; ++b) {
        const T* row = da1.row(b);
        for (std::size_t j = 0; j < dh; ++j) grads.gsg.b1[j] += row[j];
      }
    }
    outer_accumulate(cache.c, batch, dm, da1.data.data(), dh, grads.gsg.w1.data.data());
  }

  return grads;
}

// Convenience wrapper: runs a train-mode forward (running statistics
// untouched) and returns the gradients.
template <class T>
HmcParams<T> compute_gradients(HmcParams<T>& params, const Mat<T>& c_batch,
                               const Mat<T>& h_batch, std::span<const int> y,
                               const TrainConfig& tcfg) {
  BatchForward<T> fwd =
      forward_loss(params, c_batch, h_batch, y, tcfg, ForwardMode::train, false);
  return backward(params, fwd, y, tcfg);
}

// ---------------------------------------------------------------------------
// Adam with bias correction. Moment buffers mirror the parameter structure;
// the running statistics never receive updates here.

template <class T>
struct EpochStats {
  T bce = T{0};
  T reg = T{0};
  T total = T{0};
  T mean_s_normal = T{0};
  T mean_s_anomalous = T{0};
};

template <class T>
struct TrainState {
  std::int64_t step = 0;
  HmcParams<T> m;
  HmcParams<T> v;
  std::vector<EpochStats<T>> loss_history;
};

template <class T>
TrainState<T> make_train_state(const HmcParams<T>& params) {
  TrainState<T> st;
  st.m = make_zero_like(params);
  st.v = make_zero_like(params);
  return st;
}

template <class T>
void adam_step(HmcParams<T>& params, const HmcParams<T>& grads, TrainState<T>& state,
               const TrainConfig& tcfg) {
  const T b1 = static_cast<T>(tcfg.adam.beta1);
  const T b2 = static_cast<T>(tcfg.adam.beta2);
  const T eps = static_cast<T>(tcfg.adam.eps);
  const T lr = static_cast<T>(tcfg.learning_rate);
  const std::int64_t t = ++state.step;
  const T bc1 = T{1} - static_cast<T>(std::pow(tcfg.adam.beta1, static_cast<double>(t)));
  const T bc2 = T{1} - static_cast<T>(std::pow(tcfg.adam.beta2, static_cast<double>(t)));

  struct Triple {
    T* p;
    const T* g;
    T* m;
    T* v;
    std::size_t n;
    bool trainable;
  };
  std::vector<Triple> triples;
  for_each_tensor(params, [&](const std::string&, T* p, std::size_t n, bool trainable) {
    triples.push_back({p, nullptr, nullptr, nullptr, n, trainable});
  });
  std::size_t idx = 0;
  for_each_tensor(grads, [&](const std::string&, const T* g, std::size_t n, bool) {
    if (triples[idx].n != n) throw usage_error("adam_step: shape mismatch");
    triples[idx++].g = g;
  });
  idx = 0;
  for_each_tensor(state.m, [&](const std::string&, T* m, std::size_t n, bool) {
    if (triples[idx].n != n) throw usage_error("adam_step: moment shape mismatch");
    triples[idx++].m = m;
  });
  idx = 0;
  for_each_tensor(state.v, [&](const std::string&, T* v, std::size_t, bool) {
    triples[idx++].v = v;
  });

  for (const Triple& tr : triples) {
    if (!tr.trainable) continue;
    for (std::size_t i = 0; i < tr.n; ++i) {
      const T g = tr.g[i];
      tr.m[i] = b1 * tr.m[i] + (T{1} - b1) * g;
      tr.v[i] = b2 * tr.v[i] + (T{1} - b2) * g * g;
      const T mhat = tr.m[i] / bc1;
      const T vhat = tr.v[i] / bc2;
      tr.p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop: shuffled mini-batches, train-mode forwards, Adam updates.
// The trailing short batch is kept; if it has a single sample its forward
// normalizes with the running statistics (see hmc_forward).

struct TrainResult {
  HmcParams<float> params;
  TrainState<float> state;
};

namespace detail {

// Gathers the selected heads of a bank into one row-major block per segment.
inline void gather_training_arrays(const FeatureBank& bank,
                                   const std::vector<HeadId>& selected, Mat<float>& c,
                                   Mat<float>& h, std::vector<int>& y) {
  const std::size_t n = bank.n_segments();
  const auto dd = static_cast<std::size_t>(bank.meta.d_head);
  c = bank.context;
  h = Mat<float>(n, selected.size() * dd);
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const Mat<float>& feat = head_block(bank, selected[i]);
    for (std::size_t row = 0; row < n; ++row)
      std::copy_n(feat.row(row), dd, h.row(row) + i * dd);
  }
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = bank.records[i].label.value_or(-1);
}

}  // namespace detail

inline TrainResult train(const FeatureBank& bank, const std::vector<HeadId>& selected,
                         const TrainConfig& tcfg, const HmcConfig& hmc_cfg,
                         std::uint64_t seed) {
  validate(tcfg);
  validate(hmc_cfg);
  if (!bank.labeled()) throw usage_error("train requires a labeled bank");
  {
    std::size_t n_norm = 0, n_anom = 0;
    bank.class_counts(n_norm, n_anom);
    if (n_norm == 0 || n_anom == 0) throw usage_error("train requires both classes");
  }
  if (selected.empty()) throw usage_error("train: no experts selected");
  if (static_cast<std::size_t>(hmc_cfg.k) != selected.size())
    throw usage_error("train: hmc config k must equal the number of selected heads");
  if (hmc_cfg.d_model != bank.meta.d_model || hmc_cfg.d_head != bank.meta.d_head)
    throw usage_error("train: hmc config dimensions disagree with bank meta");

  Mat<float> all_c, all_h;
  std::vector<int> all_y;
  detail::gather_training_arrays(bank, selected, all_c, all_h, all_y);
  const std::size_t n = all_y.size();

  TrainResult out;
  out.params = init_params<float>(hmc_cfg, seed);
  out.state = make_train_state(out.params);

  const auto bsz = static_cast<std::size_t>(tcfg.batch_size);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  Mat<float> c_b, h_b;
  std::vector<int> y_b;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    seeded_shuffle(order, make_stream(tcfg.shuffle_seed, "epoch_shuffle",
                                      static_cast<std::uint64_t>(epoch)));
    double sum_bce = 0.0, sum_reg = 0.0;
    double sum_s_norm = 0.0, sum_s_anom = 0.0;
    std::size_t n_norm = 0, n_anom = 0;

    for (std::size_t start = 0; start < n; start += bsz) {
      const std::size_t stop = std::min(n, start + bsz);
      const std::size_t batch = stop - start;
      c_b = Mat<float>(batch, all_c.cols);
      h_b = Mat<float>(batch, all_h.cols);
      y_b.resize(batch);
      for (std::size_t i = 0; i < batch; ++i) {
        const std::size_t src = order[start + i];
        std::copy_n(all_c.row(src), all_c.cols, c_b.row(i));
        std::copy_n(all_h.row(src), all_h.cols, h_b.row(i));
        y_b[i] = all_y[src];
      }
      BatchForward<float> fwd =
          forward_loss(out.params, c_b, h_b, y_b, tcfg, ForwardMode::train);
      HmcParams<float> grads = backward(out.params, fwd, y_b, tcfg);
      adam_step(out.params, grads, out.state, tcfg);

      const float lo = static_cast<float>(kProbClamp);
      for (std::size_t i = 0; i < batch; ++i) {
        const float pc = std::clamp(fwd.probs[i], lo, 1.0f - lo);
        sum_bce -= y_b[i] == 1 ? std::log(static_cast<double>(pc))
                               : std::log(1.0 - static_cast<double>(pc));
        if (y_b[i] == 0) {
          sum_reg += static_cast<double>(fwd.cache.s[i]) * fwd.cache.s[i];
          sum_s_norm += fwd.cache.s[i];
          ++n_norm;
        } else {
          sum_s_anom += fwd.cache.s[i];
          ++n_anom;
        }
      }
    }

    EpochStats<float> es;
    es.bce = static_cast<float>(sum_bce / static_cast<double>(n));
    es.reg = n_norm > 0 ? static_cast<float>(sum_reg / static_cast<double>(n_norm)) : 0.0f;
    es.total = es.bce + static_cast<float>(tcfg.lambda_reg) * es.reg;
    es.mean_s_normal =
        n_norm > 0 ? static_cast<float>(sum_s_norm / static_cast<double>(n_norm)) : 0.0f;
    es.mean_s_anomalous =
        n_anom > 0 ? static_cast<float>(sum_s_anom / static_cast<double>(n_anom)) : 0.0f;
    out.state.loss_history.push_back(es);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Central-difference gradient oracle. Runs in the caller's precision (use
// double) with running-statistic updates disabled, so the loss is a pure
// function of the parameters. Coordinates feeding the ReLU are skipped when
// some pre-activation sits within `kink_margin` of zero, where a central
// difference would straddle the kink.

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t n_checked = 0;
  std::size_t n_skipped = 0;
};

template <class T>
GradCheckResult grad_check(HmcParams<T>& params, const Mat<T>& c_batch,
                           const Mat<T>& h_batch, std::span<const int> y,
                           const TrainConfig& tcfg, double delta,
                           std::size_t sample_target = 200,
                           std::uint64_t sample_seed = 0x5EED) {
  static_assert(std::is_same_v<T, double>, "the finite-difference oracle needs 64-bit");
  if (!(delta >= 1e-6 && delta <= 1e-4))
    throw usage_error("grad_check: delta must lie in [1e-6, 1e-4]");

  BatchForward<T> base =
      forward_loss(params, c_batch, h_batch, y, tcfg, ForwardMode::train, false);
  HmcParams<T> analytic = backward(params, base, y, tcfg);

  double kink_min = std::numeric_limits<double>::infinity();
  if (base.cache.gsg_active)
    for (const T& v : base.cache.gsg.bn_out.data)
      kink_min = std::min(kink_min, std::abs(static_cast<double>(v)));
  const double kink_margin = 1e-3;

  struct Coord {
    T* p;
    const T* g;
    bool upstream_of_relu;
  };
  std::vector<Coord> coords;
  std::vector<Coord> scalars;
  {
    std::vector<std::pair<T*, std::size_t>> ptensors;
    std::vector<std::pair<std::string, bool>> names;
    for_each_tensor(params, [&](const std::string& name, T* p, std::size_t len, bool trainable) {
      if (trainable) {
        ptensors.push_back({p, len});
        names.push_back({name, len == 1});
      }
    });
    std::vector<const T*> gtensors;
    for_each_tensor(analytic, [&](const std::string&, T* p, std::size_t, bool trainable) {
      if (trainable) gtensors.push_back(p);
    });
    for (std::size_t ti = 0; ti < ptensors.size(); ++ti) {
      const std::string& name = names[ti].first;
      const bool upstream = name == "gsg.w1" || name == "gsg.b1" ||
                            name == "gsg.gamma" || name == "gsg.beta";
      for (std::size_t i = 0; i < ptensors[ti].second; ++i) {
        Coord c{ptensors[ti].first + i, gtensors[ti] + i, upstream};
        if (names[ti].second)
          scalars.push_back(c);  // every scalar parameter is always probed
        else
          coords.push_back(c);
      }
    }
  }
  seeded_shuffle(coords, make_stream(sample_seed, "grad_check"));
  if (coords.size() > sample_target) coords.resize(sample_target);
  coords.insert(coords.end(), scalars.begin(), scalars.end());

  auto eval_total = [&]() -> double {
    BatchForward<T> f =
        forward_loss(params, c_batch, h_batch, y, tcfg, ForwardMode::train, false);
    return static_cast<double>(f.loss.total);
  };

  GradCheckResult result;
  for (const Coord& c : coords) {
    if (c.upstream_of_relu && kink_min < kink_margin) {
      ++result.n_skipped;
      continue;
    }
    const T saved = *c.p;
    *c.p = saved + static_cast<T>(delta);
    const double lp = eval_total();
    *c.p = saved - static_cast<T>(delta);
    const double lm = eval_total();
    *c.p = saved;
    const double numeric = (lp - lm) / (2.0 * delta);
    const double a = static_cast<double>(*c.g);
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
    result.max_rel_error = std::max(result.max_rel_error, err);
    ++result.n_checked;
  }
  return result;
}

}  // namespace lsteer
