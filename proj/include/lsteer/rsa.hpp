#pragma once

// Representational separability analysis: scatter-ratio scoring of every
// stored head, ranking, top-K expert selection, two slower comparator
// metrics (two-cluster silhouette, k-NN label purity), and Jaccard overlap
// of rankings across runs.
//
// All statistics accumulate in 64-bit regardless of the f32 storage.

#include <json.hpp>

#include "lsteer/featurebank.hpp"

namespace lsteer {

struct HeadStats {
  HeadId head;
  std::vector<double> mu_norm;
  std::vector<double> mu_anom;
  double sw_norm = 0.0;  // sum of squared distances to own centroid
  double sw_anom = 0.0;
  std::size_t n_norm = 0;
  std::size_t n_anom = 0;
};

enum class SelectionMetric { rsa, silhouette, knn_purity };

inline const char* to_string(SelectionMetric m) {
  switch (m) {
    case SelectionMetric::rsa: return "rsa";
    case SelectionMetric::silhouette: return "silhouette";
    case SelectionMetric::knn_purity: return "knn_purity";
  }
  return "rsa";
}

inline SelectionMetric selection_metric_from_string(const std::string& s) {
  if (s == "rsa") return SelectionMetric::rsa;
  if (s == "silhouette") return SelectionMetric::silhouette;
  if (s == "knn_purity") return SelectionMetric::knn_purity;
  throw usage_error("unknown selection metric '" + s + "'");
}

struct RsaConfig {
  double epsilon = 1e-8;
  int k = 4;
  SelectionMetric metric = SelectionMetric::rsa;
  int knn_k = 5;
};

struct ScoredHead {
  HeadId head;
  double score = 0.0;
};

struct RsaReport {
  std::vector<ScoredHead> scores;   // one entry per stored head, bank order
  std::vector<HeadId> ranking;      // score desc, ties by (layer, head) asc
  std::vector<HeadId> selected;     // first k of ranking
  RsaConfig config;
  std::string bank_fingerprint;
  std::size_t n_norm = 0;  // effective counts the scores were computed on
  std::size_t n_anom = 0;
};

namespace detail {

inline void require_labeled_two_class(const FeatureBank& bank) {
  if (!bank.labeled()) throw usage_error("operation requires a labeled bank");
  std::size_t n_norm = 0, n_anom = 0;
  bank.class_counts(n_norm, n_anom);
  if (n_norm == 0 || n_anom == 0)
    throw usage_error("operation requires both classes present");
}

}  // namespace detail

inline HeadStats head_stats(const FeatureBank& bank, const HeadId& head) {
  detail::require_labeled_two_class(bank);
  const Mat<float>& feat = head_block(bank, head);
  const std::size_t d = feat.cols;

  HeadStats st;
  st.head = head;
  st.mu_norm.assign(d, 0.0);
  st.mu_anom.assign(d, 0.0);
  for (std::size_t i = 0; i < feat.rows; ++i) {
    const bool anom = *bank.records[i].label == 1;
    auto& mu = anom ? st.mu_anom : st.mu_norm;
    (anom ? st.n_anom : st.n_norm)++;
    const float* row = feat.row(i);
    for (std::size_t j = 0; j < d; ++j) mu[j] += row[j];
  }
  for (std::size_t j = 0; j < d; ++j) {
    st.mu_norm[j] /= static_cast<double>(st.n_norm);
    st.mu_anom[j] /= static_cast<double>(st.n_anom);
  }
  for (std::size_t i = 0; i < feat.rows; ++i) {
    const bool anom = *bank.records[i].label == 1;
    const auto& mu = anom ? st.mu_anom : st.mu_norm;
    const float* row = feat.row(i);
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = row[j] - mu[j];
      ss += diff * diff;
    }
    (anom ? st.sw_anom : st.sw_norm) += ss;
  }
  return st;
}

// Between-class scatter over total within-class scatter.
inline double rsa_score(const HeadStats& st, double epsilon) {
  double sb = 0.0;
  for (std::size_t j = 0; j < st.mu_norm.size(); ++j) {
    const double diff = st.mu_anom[j] - st.mu_norm[j];
    sb += diff * diff;
  }
  return sb / (st.sw_norm + st.sw_anom + epsilon);
}

// Two-cluster silhouette with Euclidean distances, averaged over samples.
inline double silhouette_score(const FeatureBank& bank, const HeadId& head) {
  detail::require_labeled_two_class(bank);
  const Mat<float>& feat = head_block(bank, head);
  const std::size_t n = feat.rows, d = feat.cols;
  std::size_t n_norm = 0, n_anom = 0;
  bank.class_counts(n_norm, n_anom);
  if (n_norm < 2 || n_anom < 2)
    throw usage_error("silhouette_score needs at least two samples per class");

  std::vector<double> dist(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const float* a = feat.row(i);
      const float* b = feat.row(j);
      double ss = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = static_cast<double>(a[k]) - static_cast<double>(b[k]);
        ss += diff * diff;
      }
      dist[i * n + j] = dist[j * n + i] = std::sqrt(ss);
    }

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int yi = *bank.records[i].label;
    double same = 0.0, other = 0.0;
    std::size_t n_same = 0, n_other = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (*bank.records[j].label == yi) {
        same += dist[i * n + j];
        ++n_same;
      } else {
        other += dist[i * n + j];
        ++n_other;
      }
    }
    const double a = same / static_cast<double>(n_same);
    const double b = other / static_cast<double>(n_other);
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

// Mean over samples of (same-label neighbors among the k nearest) / k.
// Distance ties break toward the lower row index.
inline double knn_purity(const FeatureBank& bank, const HeadId& head, int k) {
  detail::require_labeled_two_class(bank);
  const Mat<float>& feat = head_block(bank, head);
  const std::size_t n = feat.rows, d = feat.cols;
  if (k < 1 || static_cast<std::size_t>(k) >= n)
    throw usage_error("knn_purity requires 1 <= k < n_samples");

  double total = 0.0;
  std::vector<std::pair<double, std::size_t>> order(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t m = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const float* a = feat.row(i);
      const float* b = feat.row(j);
      double ss = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = static_cast<double>(a[t]) - static_cast<double>(b[t]);
        ss += diff * diff;
      }
      order[m++] = {ss, j};
    }
    std::sort(order.begin(), order.end());
    std::size_t same = 0;
    for (int t = 0; t < k; ++t)
      if (*bank.records[order[static_cast<std::size_t>(t)].second].label ==
          *bank.records[i].label)
        ++same;
    total += static_cast<double>(same) / static_cast<double>(k);
  }
  return total / static_cast<double>(n);
}

// Scores every stored head with the configured metric and selects the top K.
// Balancing is the caller's job (compose balance_classes upstream when the
// calibration protocol wants it).
inline RsaReport rank_heads(const FeatureBank& bank, const RsaConfig& config) {
  detail::require_labeled_two_class(bank);
  if (config.k < 1) throw usage_error("rank_heads: k must be at least 1");
  if (config.epsilon <= 0.0) throw usage_error("rank_heads: epsilon must be positive");
  const std::vector<HeadId> heads = bank.stored_heads();
  if (heads.size() < static_cast<std::size_t>(config.k))
    throw usage_error("rank_heads: bank stores " + std::to_string(heads.size()) +
                      " heads, fewer than k=" + std::to_string(config.k));

  RsaReport report;
  report.config = config;
  report.bank_fingerprint = hex64(bank_fingerprint(bank));
  bank.class_counts(report.n_norm, report.n_anom);
  report.scores.resize(heads.size());

  parallel_for(heads.size(), [&](std::size_t i) {
    double s = 0.0;
    switch (config.metric) {
      case SelectionMetric::rsa:
        s = rsa_score(head_stats(bank, heads[i]), config.epsilon);
        break;
      case SelectionMetric::silhouette:
        s = silhouette_score(bank, heads[i]);
        break;
      case SelectionMetric::knn_purity:
        s = knn_purity(bank, heads[i], config.knn_k);
        break;
    }
    report.scores[i] = {heads[i], s};
  });

  std::vector<ScoredHead> sorted = report.scores;
  std::sort(sorted.begin(), sorted.end(), [](const ScoredHead& a, const ScoredHead& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.head < b.head;
  });
  report.ranking.reserve(sorted.size());
  for (const auto& sh : sorted) report.ranking.push_back(sh.head);
  report.selected.assign(report.ranking.begin(),
                         report.ranking.begin() + config.k);
  return report;
}

// Pairwise |top_n(i) & top_n(j)| / |top_n(i) | top_n(j)| across reports.
inline Mat<double> jaccard_stability(const std::vector<RsaReport>& reports,
                                     std::size_t top_n) {
  if (reports.size() < 2)
    throw usage_error("jaccard_stability needs at least two reports");
  if (top_n == 0) throw usage_error("jaccard_stability: top_n must be positive");
  std::vector<std::set<HeadId>> tops;
  for (const auto& r : reports) {
    if (r.ranking.size() < top_n)
      throw usage_error("jaccard_stability: top_n exceeds ranked heads");
    tops.emplace_back(r.ranking.begin(),
                      r.ranking.begin() + static_cast<std::ptrdiff_t>(top_n));
  }
  const std::size_t n = reports.size();
  Mat<double> m(n, n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    m.at(i, i) = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      std::size_t inter = 0;
      for (const auto& h : tops[i]) inter += tops[j].count(h);
      const std::size_t uni = tops[i].size() + tops[j].size() - inter;
      m.at(i, j) = m.at(j, i) = static_cast<double>(inter) / static_cast<double>(uni);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// JSON serialization (consumed by the `rsa` and `stability` commands).

inline nlohmann::json rsa_report_to_json(const RsaReport& r) {
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& sh : r.scores)
    scores.push_back({{"layer", sh.head.layer}, {"head", sh.head.head}, {"score", sh.score}});
  auto ids = [](const std::vector<HeadId>& v) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& h : v) arr.push_back({{"layer", h.layer}, {"head", h.head}});
    return arr;
  };
  return {{"scores", scores},
          {"ranking", ids(r.ranking)},
          {"selected", ids(r.selected)},
          {"config",
           {{"epsilon", r.config.epsilon},
            {"k", r.config.k},
            {"metric", to_string(r.config.metric)},
            {"knn_k", r.config.knn_k}}},
          {"bank_fingerprint", r.bank_fingerprint},
          {"n_norm", r.n_norm},
          {"n_anom", r.n_anom}};
}

inline RsaReport rsa_report_from_json(const nlohmann::json& j) {
  RsaReport r;
  for (const auto& sj : j.at("scores"))
    r.scores.push_back({{sj.at("layer").get<int>(), sj.at("head").get<int>()},
                        sj.at("score").get<double>()});
  auto ids = [](const nlohmann::json& arr) {
    std::vector<HeadId> v;
    for (const auto& hj : arr) v.push_back({hj.at("layer").get<int>(), hj.at("head").get<int>()});
    return v;
  };
  r.ranking = ids(j.at("ranking"));
  r.selected = ids(j.at("selected"));
  const auto& cj = j.at("config");
  r.config.epsilon = cj.at("epsilon").get<double>();
  r.config.k = cj.at("k").get<int>();
  r.config.metric = selection_metric_from_string(cj.at("metric").get<std::string>());
  r.config.knn_k = cj.at("knn_k").get<int>();
  r.bank_fingerprint = j.value("bank_fingerprint", "");
  r.n_norm = j.value("n_norm", std::size_t{0});
  r.n_anom = j.value("n_anom", std::size_t{0});
  return r;
}

}  // namespace lsteer
