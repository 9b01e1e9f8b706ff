#pragma once

// Frame-level evaluation: ROC-AUC in the rank-sum (Mann-Whitney) form with
// half credit for score ties, average precision with step interpolation over
// tie groups, and the per-class breakdown (each anomaly class scored against
// the pooled normal-video frames).

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>

#include <json.hpp>

#include "lsteer/common.hpp"

namespace lsteer {

// Equivalent to the trapezoidal ROC area; ties between a positive and a
// negative score contribute one half.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw usage_error("roc_auc: length mismatch");
  std::size_t n_pos = 0, n_neg = 0;
  for (int y : labels) (y == 1 ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw usage_error("roc_auc requires both classes present");

  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Midranks over tie groups, then the rank-sum statistic.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t)
      if (labels[idx[t]] == 1) rank_sum_pos += midrank;
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

// Average precision with step interpolation. Equal scores form one group and
// contribute a single precision/recall point, so a constant score vector
// yields exactly the positive prevalence. The descending sort is stable in
// the input order, which fixes the (otherwise immaterial) output of any
// downstream per-item inspection.
inline double average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw usage_error("average_precision: length mismatch");
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y == 1;
  if (n_pos == 0) throw usage_error("average_precision requires at least one positive");

  std::vector<std::size_t> idx(scores.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  double ap = 0.0;
  double recall_prev = 0.0;
  std::size_t tp = 0;
  std::size_t seen = 0;
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    for (std::size_t t = i; t <= j; ++t) tp += labels[idx[t]] == 1;
    seen = j + 1;
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - recall_prev) * precision;
    recall_prev = recall;
    i = j + 1;
  }
  return ap;
}

// For each anomaly class C: AUC over the frames of class-C videos plus all
// frames of normal videos. `class_names` carries the video class per frame
// (empty string for frames of normal videos).
inline std::map<std::string, double> per_class_auc(std::span<const double> scores,
                                                   std::span<const int> labels,
                                                   std::span<const std::string> class_names) {
  if (scores.size() != labels.size() || scores.size() != class_names.size())
    throw usage_error("per_class_auc: length mismatch");
  std::set<std::string> classes;
  for (const auto& c : class_names)
    if (!c.empty()) classes.insert(c);
  if (classes.empty()) throw usage_error("per_class_auc: no class annotations");

  std::map<std::string, double> out;
  for (const auto& cls : classes) {
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (class_names[i] == cls || class_names[i].empty()) {
        s.push_back(scores[i]);
        y.push_back(labels[i]);
      }
    }
    out[cls] = roc_auc(s, y);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report container + serialization.

struct SweepRow {
  std::string parameter;
  double value = 0.0;
  double auc = 0.0;
  double ap = 0.0;
};

struct EvalReport {
  double auc = 0.0;
  double ap = 0.0;
  std::map<std::string, double> per_class;
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  std::vector<SweepRow> sweep_rows;
};

inline EvalReport evaluate_frames(std::span<const double> scores, std::span<const int> labels,
                                  std::span<const std::string> class_names = {}) {
  EvalReport r;
  for (int y : labels) (y == 1 ? r.n_pos : r.n_neg)++;
  r.auc = roc_auc(scores, labels);
  r.ap = average_precision(scores, labels);
  if (!class_names.empty()) {
    bool any = false;
    for (const auto& c : class_names) any = any || !c.empty();
    if (any) r.per_class = per_class_auc(scores, labels, class_names);
  }
  return r;
}

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [name, auc] : r.per_class) per_class[name] = auc;
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.sweep_rows)
    rows.push_back({{"parameter", row.parameter},
                    {"value", row.value},
                    {"auc", row.auc},
                    {"ap", row.ap}});
  return {{"auc", r.auc},       {"ap", r.ap},     {"per_class", per_class},
          {"n_pos", r.n_pos},   {"n_neg", r.n_neg}, {"sweep_rows", rows}};
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows,
                            const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw io_error("cannot write " + file.string());
  out << "parameter,value,auc,ap\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g\n", r.parameter.c_str(), r.value,
                  r.auc, r.ap);
    out << buf;
  }
}

}  // namespace lsteer
