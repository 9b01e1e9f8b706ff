#pragma once

// Command implementations behind the `lsteer` binary: synth, rsa, train,
// infer, eval, sweep, stability, plot. One JSON run config feeds every
// command; CLI flags override individual fields, and the fully resolved
// config is echoed to run_config.resolved.json in the output directory
// before any work, so a run is reproducible from its artifacts alone.

#include <cctype>
#include <iostream>
#include <mutex>

#include "lsteer/featurebank.hpp"
#include "lsteer/hmc.hpp"
#include "lsteer/metrics.hpp"
#include "lsteer/plot.hpp"
#include "lsteer/rsa.hpp"
#include "lsteer/scorer.hpp"
#include "lsteer/trainer.hpp"

namespace lsteer {

struct SynthSection {
  std::size_t n_normal = 200;
  std::size_t n_anomalous = 200;
  int planted = 4;
  double delta = 4.0;
  std::vector<std::pair<HeadId, double>> planted_heads;  // explicit list wins over count
  int n_components_per_class = 2;
  double noise_sigma = 1.0;
  double context_signal = 4.0;
  int segments_per_video = 6;
};

struct RsaSection {
  RsaConfig config;
  bool balance = true;
  double balance_ratio = 0.5;
};

struct HmcSection {
  int d_hidden = 128;
  int r = 4;
  HmcVariant variant = HmcVariant::full;
};

struct SweepSection {
  std::string axis = "data_ratio";
  std::vector<double> values;
};

struct StabilitySection {
  int n_seeds = 10;
  double subsample_fraction = 0.5;
  std::size_t top_n = 20;
};

struct RunConfig {
  std::uint64_t seed = 1;
  BankMeta meta = desk_meta();
  SynthSection synth;
  RsaSection rsa;
  HmcSection hmc;
  TrainConfig train;
  InferenceConfig infer;
  SweepSection sweep;
  StabilitySection stability;

  // The BankMeta type defaults to the full extractor geometry; the CLI
  // defaults to a desk-scale synthetic geometry instead.
  static BankMeta desk_meta() {
    BankMeta m;
    m.d_model = 96;
    m.d_head = 16;
    m.n_layers = 6;
    m.n_heads_per_layer = 6;
    m.segment_len_frames = 48;
    m.frames_sampled = 16;
    m.source = "synthetic";
    return m;
  }
};

// ---------------------------------------------------------------------------
// Config JSON round-trip. Unknown keys are rejected to catch typos early.

namespace detail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const char* where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw usage_error(std::string("unknown config key '") + key + "' in " + where);
  }
}

}  // namespace detail

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json planted = nlohmann::json::array();
  for (const auto& [id, delta] : c.synth.planted_heads)
    planted.push_back({{"layer", id.layer}, {"head", id.head}, {"delta", delta}});
  return {
      {"seed", c.seed},
      {"bank", detail::meta_to_json(c.meta)},
      {"synth",
       {{"n_normal", c.synth.n_normal},
        {"n_anomalous", c.synth.n_anomalous},
        {"planted", c.synth.planted},
        {"delta", c.synth.delta},
        {"planted_heads", planted},
        {"n_components_per_class", c.synth.n_components_per_class},
        {"noise_sigma", c.synth.noise_sigma},
        {"context_signal", c.synth.context_signal},
        {"segments_per_video", c.synth.segments_per_video}}},
      {"rsa",
       {{"epsilon", c.rsa.config.epsilon},
        {"k", c.rsa.config.k},
        {"metric", to_string(c.rsa.config.metric)},
        {"knn_k", c.rsa.config.knn_k},
        {"balance", c.rsa.balance},
        {"balance_ratio", c.rsa.balance_ratio}}},
      {"hmc",
       {{"d_hidden", c.hmc.d_hidden}, {"r", c.hmc.r}, {"variant", to_string(c.hmc.variant)}}},
      {"train",
       {{"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"learning_rate", c.train.learning_rate},
        {"lambda_reg", c.train.lambda_reg},
        {"beta1", c.train.adam.beta1},
        {"beta2", c.train.adam.beta2},
        {"adam_eps", c.train.adam.eps},
        {"shuffle_seed", c.train.shuffle_seed},
        {"loss_reduction", to_string(c.train.loss_reduction)}}},
      {"infer",
       {{"sigma_g", c.infer.sigma_g},
        {"tau_anomaly", c.infer.tau_anomaly},
        {"kernel_radius_sigmas", c.infer.kernel_radius_sigmas}}},
      {"sweep", {{"axis", c.sweep.axis}, {"values", c.sweep.values}}},
      {"stability",
       {{"n_seeds", c.stability.n_seeds},
        {"subsample_fraction", c.stability.subsample_fraction},
        {"top_n", c.stability.top_n}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  detail::check_keys(j, {"seed", "bank", "synth", "rsa", "hmc", "train", "infer", "sweep",
                         "stability"},
                     "config root");
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("bank")) {
    nlohmann::json merged = detail::meta_to_json(c.meta);
    merged.update(j.at("bank"));
    c.meta = detail::meta_from_json(merged);
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    detail::check_keys(s,
                       {"n_normal", "n_anomalous", "planted", "delta", "planted_heads",
                        "n_components_per_class", "noise_sigma", "context_signal",
                        "segments_per_video"},
                       "synth");
    c.synth.n_normal = s.value("n_normal", c.synth.n_normal);
    c.synth.n_anomalous = s.value("n_anomalous", c.synth.n_anomalous);
    c.synth.planted = s.value("planted", c.synth.planted);
    c.synth.delta = s.value("delta", c.synth.delta);
    if (s.contains("planted_heads"))
      for (const auto& pj : s.at("planted_heads"))
        c.synth.planted_heads.push_back(
            {{pj.at("layer").get<int>(), pj.at("head").get<int>()},
             pj.value("delta", c.synth.delta)});
    c.synth.n_components_per_class =
        s.value("n_components_per_class", c.synth.n_components_per_class);
    c.synth.noise_sigma = s.value("noise_sigma", c.synth.noise_sigma);
    c.synth.context_signal = s.value("context_signal", c.synth.context_signal);
    c.synth.segments_per_video = s.value("segments_per_video", c.synth.segments_per_video);
  }
  if (j.contains("rsa")) {
    const auto& r = j.at("rsa");
    detail::check_keys(r, {"epsilon", "k", "metric", "knn_k", "balance", "balance_ratio"},
                       "rsa");
    c.rsa.config.epsilon = r.value("epsilon", c.rsa.config.epsilon);
    c.rsa.config.k = r.value("k", c.rsa.config.k);
    if (r.contains("metric"))
      c.rsa.config.metric = selection_metric_from_string(r.at("metric").get<std::string>());
    c.rsa.config.knn_k = r.value("knn_k", c.rsa.config.knn_k);
    c.rsa.balance = r.value("balance", c.rsa.balance);
    c.rsa.balance_ratio = r.value("balance_ratio", c.rsa.balance_ratio);
  }
  if (j.contains("hmc")) {
    const auto& h = j.at("hmc");
    detail::check_keys(h, {"d_hidden", "r", "variant"}, "hmc");
    c.hmc.d_hidden = h.value("d_hidden", c.hmc.d_hidden);
    c.hmc.r = h.value("r", c.hmc.r);
    if (h.contains("variant"))
      c.hmc.variant = hmc_variant_from_string(h.at("variant").get<std::string>());
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    detail::check_keys(t,
                       {"epochs", "batch_size", "learning_rate", "lambda_reg", "beta1",
                        "beta2", "adam_eps", "shuffle_seed", "loss_reduction"},
                       "train");
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    c.train.learning_rate = t.value("learning_rate", c.train.learning_rate);
    c.train.lambda_reg = t.value("lambda_reg", c.train.lambda_reg);
    c.train.adam.beta1 = t.value("beta1", c.train.adam.beta1);
    c.train.adam.beta2 = t.value("beta2", c.train.adam.beta2);
    c.train.adam.eps = t.value("adam_eps", c.train.adam.eps);
    c.train.shuffle_seed = t.value("shuffle_seed", c.train.shuffle_seed);
    if (t.contains("loss_reduction"))
      c.train.loss_reduction =
          loss_reduction_from_string(t.at("loss_reduction").get<std::string>());
  }
  if (j.contains("infer")) {
    const auto& i = j.at("infer");
    detail::check_keys(i, {"sigma_g", "tau_anomaly", "kernel_radius_sigmas"}, "infer");
    c.infer.sigma_g = i.value("sigma_g", c.infer.sigma_g);
    c.infer.tau_anomaly = i.value("tau_anomaly", c.infer.tau_anomaly);
    c.infer.kernel_radius_sigmas =
        i.value("kernel_radius_sigmas", c.infer.kernel_radius_sigmas);
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    detail::check_keys(s, {"axis", "values"}, "sweep");
    c.sweep.axis = s.value("axis", c.sweep.axis);
    if (s.contains("values")) c.sweep.values = s.at("values").get<std::vector<double>>();
  }
  if (j.contains("stability")) {
    const auto& s = j.at("stability");
    detail::check_keys(s, {"n_seeds", "subsample_fraction", "top_n"}, "stability");
    c.stability.n_seeds = s.value("n_seeds", c.stability.n_seeds);
    c.stability.subsample_fraction =
        s.value("subsample_fraction", c.stability.subsample_fraction);
    c.stability.top_n = s.value("top_n", c.stability.top_n);
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw usage_error("cannot open config " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw usage_error("config parse error in " + file.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

// Echo the fully resolved configuration next to the primary output before
// doing any work.
inline void echo_resolved_config(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::ofstream out(out_dir / "run_config.resolved.json");
  if (!out) throw io_error("cannot write run_config.resolved.json");
  out << run_config_to_json(cfg).dump(2) << "\n";
}

inline std::filesystem::path parent_or_cwd(const std::filesystem::path& p) {
  return p.has_parent_path() ? p.parent_path() : std::filesystem::path(".");
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces.

// Planted-head layout derived from the head grid alone, so banks generated
// with different sampling seeds plant the same heads.
inline std::vector<std::pair<HeadId, double>> derive_planted_heads(const BankMeta& meta,
                                                                   int count, double delta) {
  if (count < 0) throw usage_error("planted head count must be nonnegative");
  std::vector<HeadId> all;
  for (int l = 0; l < meta.n_layers; ++l)
    for (int h = 0; h < meta.n_heads_per_layer; ++h) all.push_back({l, h});
  if (static_cast<std::size_t>(count) > all.size())
    throw usage_error("more planted heads requested than heads exist");
  seeded_shuffle(all, make_stream(0x1A9E57ULL, "planted_layout"));
  std::vector<std::pair<HeadId, double>> out;
  for (int i = 0; i < count; ++i) out.push_back({all[static_cast<std::size_t>(i)], delta});
  std::sort(out.begin(), out.end());
  return out;
}

inline SynthSpec synth_spec_from_config(const RunConfig& cfg) {
  SynthSpec spec;
  spec.meta = cfg.meta;
  spec.n_normal = cfg.synth.n_normal;
  spec.n_anomalous = cfg.synth.n_anomalous;
  spec.planted_heads = cfg.synth.planted_heads.empty()
                           ? derive_planted_heads(cfg.meta, cfg.synth.planted, cfg.synth.delta)
                           : cfg.synth.planted_heads;
  spec.n_components_per_class = cfg.synth.n_components_per_class;
  spec.noise_sigma = cfg.synth.noise_sigma;
  spec.context_signal = cfg.synth.context_signal;
  spec.seed = cfg.seed;
  spec.segments_per_video = cfg.synth.segments_per_video;
  return spec;
}

// Per-class video subsampling. The sweep and stability harnesses use this
// instead of plain `subsample` so tiny fractions cannot produce a
// single-class calibration set.
inline FeatureBank subsample_stratified_videos(const FeatureBank& bank, double fraction,
                                               std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw usage_error("subsample fraction must lie in (0,1]");
  if (!bank.labeled()) throw usage_error("stratified subsampling requires labels");
  if (fraction == 1.0) return bank;

  std::map<std::string, bool> video_has_anom;
  std::vector<std::string> order;
  for (const auto& r : bank.records) {
    auto [it, inserted] = video_has_anom.try_emplace(r.video_id, false);
    if (inserted) order.push_back(r.video_id);
    it->second = it->second || *r.label == 1;
  }
  std::vector<std::string> norm_videos, anom_videos;
  for (const auto& v : order)
    (video_has_anom[v] ? anom_videos : norm_videos).push_back(v);

  auto pick = [&](std::vector<std::string> vids, std::uint64_t salt) {
    seeded_shuffle(vids, make_stream(seed, "stratified", salt));
    const auto keep = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(vids.size()))));
    vids.resize(std::min(vids.size(), keep));
    return vids;
  };
  std::set<std::string> chosen;
  if (!norm_videos.empty())
    for (auto& v : pick(std::move(norm_videos), 0)) chosen.insert(std::move(v));
  if (!anom_videos.empty())
    for (auto& v : pick(std::move(anom_videos), 1)) chosen.insert(std::move(v));

  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < bank.records.size(); ++i)
    if (chosen.count(bank.records[i].video_id)) keep.push_back(i);
  return gather_rows(bank, keep);
}

struct PipelineOutcome {
  RsaReport report;
  TrainResult trained;
  std::vector<AnomalyCurve> curves;
  EvalReport eval;
};

// Calibrate on `train_bank`, evaluate frame-level metrics on `eval_bank`.
inline PipelineOutcome run_calibration_pipeline(const FeatureBank& train_bank,
                                                const FeatureBank& eval_bank,
                                                const RunConfig& cfg) {
  PipelineOutcome out;
  FeatureBank calib = cfg.rsa.balance
                          ? balance_classes(train_bank, cfg.rsa.balance_ratio, cfg.seed)
                          : train_bank;
  out.report = rank_heads(calib, cfg.rsa.config);

  HmcConfig hmc_cfg;
  hmc_cfg.d_model = train_bank.meta.d_model;
  hmc_cfg.d_head = train_bank.meta.d_head;
  hmc_cfg.d_hidden = cfg.hmc.d_hidden;
  hmc_cfg.r = cfg.hmc.r;
  hmc_cfg.k = static_cast<int>(out.report.selected.size());
  hmc_cfg.variant = cfg.hmc.variant;
  out.trained = train(calib, out.report.selected, cfg.train, hmc_cfg, cfg.seed);

  out.curves = infer(eval_bank, out.trained.params, out.report.selected, cfg.infer);

  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::string> classes;
  for (const auto& c : out.curves) {
    if (c.frame_labels.empty()) continue;
    for (std::size_t f = 0; f < c.frame_smooth.size(); ++f) {
      scores.push_back(c.frame_smooth[f]);
      labels.push_back(c.frame_labels[f]);
      classes.push_back(c.class_name.value_or(""));
    }
  }
  if (scores.empty()) throw usage_error("evaluation bank carries no labels");
  out.eval = evaluate_frames(scores, labels, classes);
  return out;
}

// ---------------------------------------------------------------------------
// Commands. Each validates, echoes the resolved config, runs, and writes its
// outputs; usage errors surface as lsteer::usage_error (exit code 2).

inline void cmd_synth(const RunConfig& cfg, const std::filesystem::path& out_stem,
                      BankFormat format) {
  echo_resolved_config(cfg, parent_or_cwd(out_stem));
  const SynthSpec spec = synth_spec_from_config(cfg);
  const FeatureBank bank = synth_bank(spec);
  save_bank(bank, out_stem, format);
  std::size_t n_norm = 0, n_anom = 0;
  bank.class_counts(n_norm, n_anom);
  std::cout << "wrote bank " << out_stem.string() << ": " << bank.n_segments()
            << " segments (" << n_norm << " normal / " << n_anom << " anomalous), "
            << bank.head_features.size() << " heads, d_head " << bank.meta.d_head
            << ", planted";
  for (const auto& [id, delta] : spec.planted_heads)
    std::cout << " " << to_string(id) << "(delta=" << delta << ")";
  std::cout << "\n";
}

inline void cmd_rsa(const RunConfig& cfg, const std::filesystem::path& bank_path,
                    const std::filesystem::path& out_json) {
  echo_resolved_config(cfg, parent_or_cwd(out_json));
  const FeatureBank bank = load_bank(bank_path);
  if (!bank.labeled())
    throw usage_error("rsa requires a labeled bank (labels are absent)");
  const FeatureBank calib =
      cfg.rsa.balance ? balance_classes(bank, cfg.rsa.balance_ratio, cfg.seed) : bank;
  const RsaReport report = rank_heads(calib, cfg.rsa.config);
  std::ofstream out(out_json);
  if (!out) throw io_error("cannot write " + out_json.string());
  nlohmann::json j = rsa_report_to_json(report);
  j["balanced"] = cfg.rsa.balance;
  out << j.dump(2) << "\n";
  std::cout << "scored " << report.scores.size() << " heads on " << report.n_norm
            << " normal / " << report.n_anom << " anomalous segments; selected";
  for (const auto& id : report.selected) std::cout << " " << to_string(id);
  std::cout << "\n";
}

inline void cmd_train(const RunConfig& cfg, const std::filesystem::path& bank_path,
                      const std::filesystem::path& report_path,
                      const std::filesystem::path& out_ckpt) {
  echo_resolved_config(cfg, parent_or_cwd(out_ckpt));
  const FeatureBank bank = load_bank(bank_path);
  if (!bank.labeled()) throw usage_error("train requires a labeled bank");
  std::ifstream rin(report_path);
  if (!rin) throw usage_error("cannot open selection report " + report_path.string());
  nlohmann::json rj;
  rin >> rj;
  const RsaReport report = rsa_report_from_json(rj);
  if (report.selected.empty()) throw usage_error("selection report has no selected heads");

  const FeatureBank calib =
      cfg.rsa.balance ? balance_classes(bank, cfg.rsa.balance_ratio, cfg.seed) : bank;

  HmcConfig hmc_cfg;
  hmc_cfg.d_model = bank.meta.d_model;
  hmc_cfg.d_head = bank.meta.d_head;
  hmc_cfg.d_hidden = cfg.hmc.d_hidden;
  hmc_cfg.r = cfg.hmc.r;
  hmc_cfg.k = static_cast<int>(report.selected.size());
  hmc_cfg.variant = cfg.hmc.variant;
  const TrainResult result = train(calib, report.selected, cfg.train, hmc_cfg, cfg.seed);

  CheckpointInfo info;
  info.seed = cfg.seed;
  info.epoch = cfg.train.epochs;
  for (const auto& id : report.selected) info.selected.emplace_back(id.layer, id.head);
  save_checkpoint(result.params, out_ckpt, info);

  const std::filesystem::path log_path = parent_or_cwd(out_ckpt) / "train_log.jsonl";
  std::ofstream log(log_path);
  if (!log) throw io_error("cannot write " + log_path.string());
  for (std::size_t e = 0; e < result.state.loss_history.size(); ++e) {
    const auto& es = result.state.loss_history[e];
    log << nlohmann::json{{"epoch", e},
                          {"bce", es.bce},
                          {"reg", es.reg},
                          {"total", es.total},
                          {"mean_s_normal", es.mean_s_normal},
                          {"mean_s_anomalous", es.mean_s_anomalous}}
               .dump()
        << "\n";
  }
  const auto& last = result.state.loss_history;
  std::cout << "trained " << to_string(cfg.hmc.variant) << " for " << cfg.train.epochs
            << " epochs";
  if (!last.empty()) std::cout << ", final total loss " << last.back().total;
  std::cout << "; checkpoint " << out_ckpt.string() << "\n";
}

inline std::string sanitize_filename(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return out;
}

inline void cmd_infer(const RunConfig& cfg, const std::filesystem::path& bank_path,
                      const std::filesystem::path& ckpt_path,
                      const std::filesystem::path& out_dir) {
  echo_resolved_config(cfg, out_dir);
  const FeatureBank bank = load_bank(bank_path);
  auto [params, info] = load_checkpoint(ckpt_path);
  std::vector<HeadId> selected;
  for (const auto& [l, h] : info.selected) selected.push_back({l, h});
  if (selected.empty()) throw usage_error("checkpoint lists no selected heads");

  const std::vector<AnomalyCurve> curves = infer(bank, params, selected, cfg.infer);
  std::filesystem::create_directories(out_dir / "curves");
  for (const auto& c : curves)
    write_curve_csv(c, out_dir / "curves" / (sanitize_filename(c.video_id) + ".csv"));
  std::ofstream sum(out_dir / "summary.json");
  if (!sum) throw io_error("cannot write summary.json");
  sum << curves_summary_json(curves, cfg.infer).dump(2) << "\n";
  std::size_t flagged = 0;
  for (const auto& c : curves) flagged += c.flags.size();
  std::cout << "scored " << curves.size() << " videos, flagged " << flagged
            << " segments above tau=" << cfg.infer.tau_anomaly << "\n";
}

inline void cmd_eval(const RunConfig& cfg, const std::filesystem::path& curves_dir,
                     const std::filesystem::path& out_json) {
  echo_resolved_config(cfg, parent_or_cwd(out_json));
  std::ifstream sin(curves_dir / "summary.json");
  if (!sin) throw usage_error("no summary.json under " + curves_dir.string());
  nlohmann::json summary;
  sin >> summary;

  std::vector<double> scores;
  std::vector<int> labels;
  std::vector<std::string> classes;
  for (const auto& vj : summary.at("videos")) {
    const std::string vid = vj.at("video_id").get<std::string>();
    const std::string cls = vj.value("class_name", "");
    const CurveCsv csv =
        read_curve_csv(curves_dir / "curves" / (sanitize_filename(vid) + ".csv"));
    if (csv.labels.empty())
      throw usage_error("video " + vid + " carries no labels; cannot evaluate");
    for (std::size_t f = 0; f < csv.smooth.size(); ++f) {
      scores.push_back(csv.smooth[f]);
      labels.push_back(csv.labels[f]);
      classes.push_back(cls);
    }
  }
  if (scores.empty()) throw usage_error("no curves found under " + curves_dir.string());
  const EvalReport report = evaluate_frames(scores, labels, classes);
  std::ofstream out(out_json);
  if (!out) throw io_error("cannot write " + out_json.string());
  out << eval_report_to_json(report).dump(2) << "\n";
  std::cout << "frames: " << report.n_pos << " positive / " << report.n_neg
            << " negative; AUC " << report.auc << ", AP " << report.ap << "\n";
}

inline void cmd_sweep(const RunConfig& cfg, const std::filesystem::path& bank_path,
                      const std::filesystem::path& eval_bank_path,
                      const std::filesystem::path& out_csv) {
  if (cfg.sweep.values.empty())
    throw usage_error("sweep requires a non-empty values list");
  const std::string& axis = cfg.sweep.axis;
  if (axis != "data_ratio" && axis != "class_ratio" && axis != "k_experts" &&
      axis != "lambda_reg")
    throw usage_error("unknown sweep axis '" + axis + "'");
  echo_resolved_config(cfg, parent_or_cwd(out_csv));

  const FeatureBank bank = load_bank(bank_path);
  const FeatureBank eval_bank = load_bank(eval_bank_path);
  if (!bank.labeled()) throw usage_error("sweep requires a labeled calibration bank");

  std::vector<SweepRow> rows(cfg.sweep.values.size());
  std::exception_ptr failure;
  std::mutex failure_mu;
  parallel_for(cfg.sweep.values.size(), [&](std::size_t i) {
    try {
      const double value = cfg.sweep.values[i];
      RunConfig row_cfg = cfg;
      row_cfg.seed = splitmix64(cfg.seed ^ (0xA5A5ULL + i));
      FeatureBank calib = bank;
      if (axis == "data_ratio") {
        calib = subsample_stratified_videos(bank, value, row_cfg.seed);
      } else if (axis == "class_ratio") {
        row_cfg.rsa.balance = true;
        row_cfg.rsa.balance_ratio = value;
      } else if (axis == "k_experts") {
        row_cfg.rsa.config.k = static_cast<int>(value);
      } else {
        row_cfg.train.lambda_reg = value;
      }
      const PipelineOutcome outcome = run_calibration_pipeline(calib, eval_bank, row_cfg);
      rows[i] = {axis, value, outcome.eval.auc, outcome.eval.ap};
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);

  write_sweep_csv(rows, out_csv);
  for (const auto& r : rows)
    std::cout << axis << "=" << r.value << " -> AUC " << r.auc << ", AP " << r.ap << "\n";
}

inline void cmd_stability(const RunConfig& cfg, const std::filesystem::path& bank_path,
                          const std::filesystem::path& out_json) {
  if (cfg.stability.n_seeds < 2)
    throw usage_error("stability requires at least 2 seeds");
  echo_resolved_config(cfg, parent_or_cwd(out_json));
  const FeatureBank bank = load_bank(bank_path);
  if (!bank.labeled()) throw usage_error("stability requires a labeled bank");

  std::vector<RsaReport> reports(static_cast<std::size_t>(cfg.stability.n_seeds));
  std::exception_ptr failure;
  std::mutex failure_mu;
  parallel_for(reports.size(), [&](std::size_t i) {
    try {
      const std::uint64_t seed = splitmix64(cfg.seed ^ (0x57AB1EULL + i));
      FeatureBank calib =
          subsample_stratified_videos(bank, cfg.stability.subsample_fraction, seed);
      if (cfg.rsa.balance) calib = balance_classes(calib, cfg.rsa.balance_ratio, seed);
      reports[i] = rank_heads(calib, cfg.rsa.config);
    } catch (...) {
      std::lock_guard<std::mutex> lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  });
  if (failure) std::rethrow_exception(failure);

  const std::size_t top_n = std::min<std::size_t>(cfg.stability.top_n,
                                                  reports.front().ranking.size());
  const Mat<double> jac = jaccard_stability(reports, top_n);

  bool identical = true;
  for (std::size_t i = 1; i < reports.size(); ++i)
    identical = identical && reports[i].selected == reports[0].selected;

  nlohmann::json runs = nlohmann::json::array();
  for (std::size_t i = 0; i < reports.size(); ++i) {
    nlohmann::json sel = nlohmann::json::array();
    for (const auto& id : reports[i].selected)
      sel.push_back({{"layer", id.layer}, {"head", id.head}});
    runs.push_back({{"run", i}, {"selected", sel}});
  }
  nlohmann::json matrix = nlohmann::json::array();
  for (std::size_t i = 0; i < jac.rows; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < jac.cols; ++j) row.push_back(jac.at(i, j));
    matrix.push_back(std::move(row));
  }
  std::ofstream out(out_json);
  if (!out) throw io_error("cannot write " + out_json.string());
  out << nlohmann::json{{"runs", runs},
                        {"jaccard_top_n", top_n},
                        {"jaccard", matrix},
                        {"selected_identical", identical}}
             .dump(2)
      << "\n";
  std::cout << "stability over " << reports.size() << " seeds: selected sets "
            << (identical ? "identical" : "differ") << ", top-" << top_n
            << " Jaccard recorded\n";
}

inline void cmd_plot(const RunConfig& cfg, const std::filesystem::path& curve_csv,
                     const std::filesystem::path& out_svg) {
  echo_resolved_config(cfg, parent_or_cwd(out_svg));
  const CurveCsv curve = read_curve_csv(curve_csv);
  if (curve.raw.empty()) throw usage_error("curve " + curve_csv.string() + " is empty");
  const std::string title = curve_csv.stem().string();
  const std::string svg = render_curve_svg(curve, title, cfg.infer.tau_anomaly);
  std::ofstream out(out_svg);
  if (!out) throw io_error("cannot write " + out_svg.string());
  out << svg;
  std::cout << "wrote " << out_svg.string() << " (" << curve.raw.size() << " frames)\n";
}

}  // namespace lsteer
