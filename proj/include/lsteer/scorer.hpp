#pragma once

// Inference pipeline: per-segment probabilities from the linear scorer,
// expansion to frame-level scores, truncated-Gaussian temporal smoothing
// with in-window renormalization, and threshold flagging. Smoothing never
// crosses video boundaries; every per-video pipeline is an independent pure
// function of its inputs.

#include <span>

#include <json.hpp>

#include "lsteer/featurebank.hpp"
#include "lsteer/hmc.hpp"

namespace lsteer {

struct InferenceConfig {
  double sigma_g = 6.0;        // Gaussian std in frames
  double tau_anomaly = 0.5;    // strict flagging threshold
  int kernel_radius_sigmas = 4;
};

inline void validate(const InferenceConfig& c) {
  if (!(c.sigma_g > 0.0)) throw usage_error("sigma_g must be positive");
  if (c.tau_anomaly < 0.0 || c.tau_anomaly > 1.0)
    throw usage_error("tau_anomaly must lie in [0,1]");
  if (c.kernel_radius_sigmas < 1)
    throw usage_error("kernel_radius_sigmas must be at least 1");
}

struct SegmentFlag {
  int segment_index = 0;
  double mean_smoothed_score = 0.0;
};

struct AnomalyCurve {
  std::string video_id;
  std::vector<double> segment_probs;
  std::vector<double> frame_raw;
  std::vector<double> frame_smooth;
  std::vector<SegmentFlag> flags;          // sorted by segment_index
  std::vector<int> frame_labels;           // per-frame labels when known, else empty
  std::optional<std::string> class_name;   // video class when any segment carries one
};

inline double score_segment(std::span<const float> f_final, std::span<const float> w,
                            double b) {
  if (f_final.size() != w.size()) throw usage_error("score_segment: shape mismatch");
  double z = b;
  for (std::size_t i = 0; i < f_final.size(); ++i)
    z += static_cast<double>(f_final[i]) * static_cast<double>(w[i]);
  return stable_sigmoid(z);
}

// Assigns each segment's probability to its frame range. Records must tile
// the video contiguously from frame 0; `n_frames` may extend past the last
// segment, in which case the trailing remainder inherits the last segment's
// probability.
inline std::vector<double> expand_to_frames(std::span<const double> segment_probs,
                                            std::span<const SegmentRecord> records,
                                            std::size_t n_frames = 0) {
  if (segment_probs.size() != records.size())
    throw usage_error("expand_to_frames: one probability per segment required");
  if (records.empty()) throw usage_error("expand_to_frames: empty video");
  int cursor = 0;
  for (const auto& r : records) {
    if (r.frame_start != cursor)
      throw usage_error("expand_to_frames: segments of video " + r.video_id +
                        " do not tile contiguously from frame 0");
    if (r.frame_end <= r.frame_start)
      throw usage_error("expand_to_frames: empty segment range");
    cursor = r.frame_end;
  }
  const std::size_t covered = static_cast<std::size_t>(cursor);
  const std::size_t total = std::max(n_frames, covered);
  std::vector<double> out(total, 0.0);
  for (std::size_t t = 0; t < records.size(); ++t)
    for (int f = records[t].frame_start; f < records[t].frame_end; ++f)
      out[static_cast<std::size_t>(f)] = segment_probs[t];
  for (std::size_t f = covered; f < total; ++f) out[f] = segment_probs.back();
  return out;
}

// Weighted moving average with Gaussian weights exp(-d^2 / (2 sigma^2)),
// truncated at ceil(kernel_radius_sigmas * sigma) and renormalized over the
// in-window weights, which handles boundaries natively. The output at every
// index is a convex combination of the inputs.
inline std::vector<double> smooth(std::span<const double> frame_raw,
                                  const InferenceConfig& config) {
  validate(config);
  if (frame_raw.empty()) throw usage_error("smooth: empty input");
  const auto radius = static_cast<std::ptrdiff_t>(
      std::ceil(config.kernel_radius_sigmas * config.sigma_g));
  std::vector<double> kernel(static_cast<std::size_t>(radius) + 1);
  for (std::ptrdiff_t d = 0; d <= radius; ++d)
    kernel[static_cast<std::size_t>(d)] =
        std::exp(-static_cast<double>(d * d) / (2.0 * config.sigma_g * config.sigma_g));

  const auto n = static_cast<std::ptrdiff_t>(frame_raw.size());
  std::vector<double> out(frame_raw.size());
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    double num = 0.0, den = 0.0;
    const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, t - radius);
    const std::ptrdiff_t hi = std::min(n - 1, t + radius);
    for (std::ptrdiff_t j = lo; j <= hi; ++j) {
      const double w = kernel[static_cast<std::size_t>(std::abs(t - j))];
      num += w * frame_raw[static_cast<std::size_t>(j)];
      den += w;
    }
    out[static_cast<std::size_t>(t)] = num / den;
  }
  return out;
}

// Flags segments whose mean smoothed score strictly exceeds tau.
inline std::vector<SegmentFlag> flag_segments(std::span<const double> frame_smooth,
                                              std::span<const SegmentRecord> records,
                                              double tau) {
  std::vector<SegmentFlag> flags;
  for (const auto& r : records) {
    const auto start = static_cast<std::size_t>(r.frame_start);
    const auto stop = std::min(frame_smooth.size(), static_cast<std::size_t>(r.frame_end));
    if (start >= stop) continue;
    double sum = 0.0;
    for (std::size_t f = start; f < stop; ++f) sum += frame_smooth[f];
    const double mean = sum / static_cast<double>(stop - start);
    if (mean > tau) flags.push_back({r.segment_index, mean});
  }
  return flags;
}

// Full single-pass pipeline over an (optionally unlabeled) bank: per video,
// eval-mode controller forward, scoring, expansion, smoothing, flagging.
// Videos come back in first-appearance order.
inline std::vector<AnomalyCurve> infer(const FeatureBank& bank, HmcParams<float>& params,
                                       const std::vector<HeadId>& selected,
                                       const InferenceConfig& config) {
  validate(config);
  if (selected.size() != static_cast<std::size_t>(params.config.k))
    throw usage_error("infer: selected heads disagree with checkpoint k");
  if (params.config.d_model != bank.meta.d_model ||
      params.config.d_head != bank.meta.d_head)
    throw usage_error("infer: checkpoint dimensions disagree with bank meta");
  for (const auto& id : selected) head_block(bank, id);  // missing-head check

  std::vector<std::string> order;
  std::map<std::string, std::vector<std::size_t>> by_video;
  for (std::size_t i = 0; i < bank.records.size(); ++i) {
    const auto& vid = bank.records[i].video_id;
    auto [it, inserted] = by_video.try_emplace(vid);
    if (inserted) order.push_back(vid);
    it->second.push_back(i);
  }

  const auto dd = static_cast<std::size_t>(bank.meta.d_head);
  std::vector<AnomalyCurve> curves;
  curves.reserve(order.size());
  for (const auto& vid : order) {
    const std::vector<std::size_t>& rows = by_video[vid];
    const std::size_t t_count = rows.size();

    Mat<float> c_b(t_count, bank.context.cols);
    Mat<float> h_b(t_count, selected.size() * dd);
    std::vector<SegmentRecord> records;
    records.reserve(t_count);
    for (std::size_t i = 0; i < t_count; ++i) {
      std::copy_n(bank.context.row(rows[i]), bank.context.cols, c_b.row(i));
      for (std::size_t s = 0; s < selected.size(); ++s)
        std::copy_n(head_block(bank, selected[s]).row(rows[i]), dd, h_b.row(i) + s * dd);
      records.push_back(bank.records[rows[i]]);
    }

    HmcCache<float> cache = hmc_forward(params, c_b, h_b, ForwardMode::eval);

    AnomalyCurve curve;
    curve.video_id = vid;
    curve.segment_probs.resize(t_count);
    for (std::size_t t = 0; t < t_count; ++t)
      curve.segment_probs[t] =
          score_segment(std::span<const float>(cache.f_final.row(t), cache.f_final.cols),
                        params.scorer_w, static_cast<double>(params.scorer_b));
    curve.frame_raw = expand_to_frames(curve.segment_probs, records);
    curve.frame_smooth = smooth(curve.frame_raw, config);
    curve.flags = flag_segments(curve.frame_smooth, records, config.tau_anomaly);

    bool have_labels = true;
    for (const auto& r : records) have_labels = have_labels && r.label.has_value();
    if (have_labels) {
      curve.frame_labels.assign(curve.frame_raw.size(), 0);
      for (const auto& r : records)
        for (int f = r.frame_start; f < r.frame_end; ++f)
          curve.frame_labels[static_cast<std::size_t>(f)] = *r.label;
    }
    for (const auto& r : records)
      if (r.class_name && r.label.value_or(1) == 1) {
        curve.class_name = r.class_name;
        break;
      }
    curves.push_back(std::move(curve));
  }
  return curves;
}

// ---------------------------------------------------------------------------
// Export: one CSV per video (frame_index, raw, smooth[, label]) plus a JSON
// summary with flags and per-video stats.

inline void write_curve_csv(const AnomalyCurve& curve, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw io_error("cannot write " + file.string());
  const bool labeled = !curve.frame_labels.empty();
  out << (labeled ? "frame_index,raw,smooth,label\n" : "frame_index,raw,smooth\n");
  char buf[96];
  for (std::size_t f = 0; f < curve.frame_raw.size(); ++f) {
    if (labeled)
      std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%d\n", f, curve.frame_raw[f],
                    curve.frame_smooth[f], curve.frame_labels[f]);
    else
      std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g\n", f, curve.frame_raw[f],
                    curve.frame_smooth[f]);
    out << buf;
  }
}

struct CurveCsv {
  std::vector<double> raw;
  std::vector<double> smooth;
  std::vector<int> labels;  // empty when the label column is absent
};

inline CurveCsv read_curve_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw io_error("cannot open " + file.string());
  std::string line;
  if (!std::getline(in, line)) throw io_error("empty curve file " + file.string());
  const bool labeled = line.find(",label") != std::string::npos;
  CurveCsv csv;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t idx;
    double raw, smoothv;
    int label = 0;
    const int got = labeled
                        ? std::sscanf(line.c_str(), "%zu,%lf,%lf,%d", &idx, &raw, &smoothv, &label)
                        : std::sscanf(line.c_str(), "%zu,%lf,%lf", &idx, &raw, &smoothv);
    if (got < (labeled ? 4 : 3)) throw io_error("malformed curve row: " + line);
    csv.raw.push_back(raw);
    csv.smooth.push_back(smoothv);
    if (labeled) csv.labels.push_back(label);
  }
  return csv;
}

inline nlohmann::json curves_summary_json(const std::vector<AnomalyCurve>& curves,
                                          const InferenceConfig& config) {
  nlohmann::json videos = nlohmann::json::array();
  for (const auto& c : curves) {
    double peak = 0.0, mean = 0.0;
    for (double v : c.frame_smooth) {
      peak = std::max(peak, v);
      mean += v;
    }
    if (!c.frame_smooth.empty()) mean /= static_cast<double>(c.frame_smooth.size());
    nlohmann::json flags = nlohmann::json::array();
    for (const auto& f : c.flags)
      flags.push_back({{"segment_index", f.segment_index}, {"mean", f.mean_smoothed_score}});
    nlohmann::json v{{"video_id", c.video_id},
                     {"n_frames", c.frame_raw.size()},
                     {"n_segments", c.segment_probs.size()},
                     {"peak_smooth", peak},
                     {"mean_smooth", mean},
                     {"flags", flags}};
    if (c.class_name) v["class_name"] = *c.class_name;
    videos.push_back(std::move(v));
  }
  return {{"videos", videos},
          {"config",
           {{"sigma_g", config.sigma_g},
            {"tau_anomaly", config.tau_anomaly},
            {"kernel_radius_sigmas", config.kernel_radius_sigmas}}}};
}

}  // namespace lsteer
