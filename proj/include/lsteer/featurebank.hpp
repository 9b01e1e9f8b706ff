#pragma once

// Feature banks: labeled per-segment context vectors plus per-head feature
// vectors, the sole input to selection, training, and inference.
//
// On disk a bank is either
//   <stem>.manifest.json + <stem>.bank.bin   (f32 little-endian, row-major,
//                                             one block per stored head, then
//                                             one block for context)
// or a single <stem>.bank.json for small fixtures. The manifest carries a
// schema_version integer (currently 1) and per-block byte offsets.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "lsteer/common.hpp"

namespace lsteer {

constexpr int kBankSchemaVersion = 1;

struct HeadId {
  int layer = 0;
  int head = 0;

  auto operator<=>(const HeadId&) const = default;
};

inline std::string to_string(const HeadId& id) {
  return "L" + std::to_string(id.layer) + "H" + std::to_string(id.head);
}

struct BankMeta {
  int d_model = 3584;
  int d_head = 128;
  int n_layers = 28;
  int n_heads_per_layer = 28;
  int segment_len_frames = 48;
  int frames_sampled = 16;
  std::string source;

  bool valid_head(const HeadId& id) const {
    return id.layer >= 0 && id.layer < n_layers && id.head >= 0 &&
           id.head < n_heads_per_layer;
  }
};

enum class LabelGranularity { segment_level, video_level };

struct SegmentRecord {
  std::string video_id;
  int segment_index = 0;
  int frame_start = 0;
  int frame_end = 0;  // half-open [frame_start, frame_end)
  std::optional<int> label;  // 0 = normal, 1 = anomalous; absent on inference banks
  std::optional<std::string> class_name;
  LabelGranularity granularity = LabelGranularity::segment_level;
};

struct FeatureBank {
  BankMeta meta;
  std::vector<SegmentRecord> records;
  Mat<float> context;                    // n_segments x d_model
  std::map<HeadId, Mat<float>> head_features;  // each n_segments x d_head

  std::size_t n_segments() const { return records.size(); }

  bool labeled() const {
    if (records.empty()) return false;
    for (const auto& r : records)
      if (!r.label.has_value()) return false;
    return true;
  }

  std::vector<HeadId> stored_heads() const {
    std::vector<HeadId> out;
    out.reserve(head_features.size());
    for (const auto& [id, m] : head_features) out.push_back(id);
    return out;
  }

  void class_counts(std::size_t& n_norm, std::size_t& n_anom) const {
    n_norm = n_anom = 0;
    for (const auto& r : records) {
      if (!r.label) continue;
      (*r.label == 0 ? n_norm : n_anom)++;
    }
  }
};

inline const Mat<float>& head_block(const FeatureBank& bank, const HeadId& head) {
  auto it = bank.head_features.find(head);
  if (it == bank.head_features.end())
    throw usage_error("head " + to_string(head) + " not stored in bank");
  return it->second;
}

// Structural validation shared by the loader and the generators.
inline void validate_bank(const FeatureBank& bank) {
  const BankMeta& m = bank.meta;
  if (m.d_model <= 0 || m.d_head <= 0 || m.n_layers <= 0 ||
      m.n_heads_per_layer <= 0 || m.segment_len_frames <= 0 || m.frames_sampled <= 0)
    throw io_error("bank meta has a non-positive dimension");
  const std::size_t n = bank.records.size();
  if (bank.context.rows != n || bank.context.cols != static_cast<std::size_t>(m.d_model))
    throw io_error("context matrix shape does not match records/meta");
  if (!bank.context.all_finite()) throw io_error("non-finite value in context block");
  for (const auto& [id, feat] : bank.head_features) {
    if (!m.valid_head(id)) throw io_error("stored head " + to_string(id) + " outside meta bounds");
    if (feat.rows != n || feat.cols != static_cast<std::size_t>(m.d_head))
      throw io_error("head " + to_string(id) + " feature shape mismatch");
    if (!feat.all_finite()) throw io_error("non-finite value in head " + to_string(id));
  }
  std::map<std::string, int> last_end;  // per-video frame cursor
  std::map<std::string, int> last_index;
  for (const auto& r : bank.records) {
    if (r.frame_end <= r.frame_start)
      throw io_error("segment with empty frame range in video " + r.video_id);
    if (r.label && *r.label != 0 && *r.label != 1)
      throw io_error("label must be 0 or 1");
    auto it = last_end.find(r.video_id);
    if (it != last_end.end()) {
      if (r.segment_index <= last_index[r.video_id])
        throw io_error("segments of video " + r.video_id + " not ordered by index");
      if (r.frame_start < it->second)
        throw io_error("overlapping frame ranges in video " + r.video_id);
    }
    last_end[r.video_id] = r.frame_end;
    last_index[r.video_id] = r.segment_index;
  }
}

inline std::uint64_t bank_fingerprint(const FeatureBank& bank) {
  Hasher h;
  h.pod(bank.meta.d_model);
  h.pod(bank.meta.d_head);
  h.pod(bank.meta.n_layers);
  h.pod(bank.meta.n_heads_per_layer);
  h.pod(bank.meta.segment_len_frames);
  h.pod(bank.meta.frames_sampled);
  h.str(bank.meta.source);
  for (const auto& r : bank.records) {
    h.str(r.video_id);
    h.pod(r.segment_index);
    h.pod(r.frame_start);
    h.pod(r.frame_end);
    h.pod(r.label.value_or(-1));
    h.str(r.class_name.value_or(""));
    h.pod(static_cast<int>(r.granularity));
  }
  h.bytes(bank.context.data.data(), bank.context.data.size() * sizeof(float));
  for (const auto& [id, feat] : bank.head_features) {
    h.pod(id.layer);
    h.pod(id.head);
    h.bytes(feat.data.data(), feat.data.size() * sizeof(float));
  }
  return h.h;
}

// ---------------------------------------------------------------------------
// JSON conversions

namespace detail {

inline nlohmann::json meta_to_json(const BankMeta& m) {
  return {{"d_model", m.d_model},
          {"d_head", m.d_head},
          {"n_layers", m.n_layers},
          {"n_heads_per_layer", m.n_heads_per_layer},
          {"segment_len_frames", m.segment_len_frames},
          {"frames_sampled", m.frames_sampled},
          {"source", m.source}};
}

inline BankMeta meta_from_json(const nlohmann::json& j) {
  BankMeta m;
  m.d_model = j.at("d_model").get<int>();
  m.d_head = j.at("d_head").get<int>();
  m.n_layers = j.at("n_layers").get<int>();
  m.n_heads_per_layer = j.at("n_heads_per_layer").get<int>();
  m.segment_len_frames = j.at("segment_len_frames").get<int>();
  m.frames_sampled = j.at("frames_sampled").get<int>();
  m.source = j.value("source", std::string{});
  return m;
}

inline nlohmann::json record_to_json(const SegmentRecord& r) {
  nlohmann::json j{{"video_id", r.video_id},
                   {"segment_index", r.segment_index},
                   {"frame_start", r.frame_start},
                   {"frame_end", r.frame_end},
                   {"granularity", r.granularity == LabelGranularity::video_level
                                       ? "video_level"
                                       : "segment_level"}};
  if (r.label) j["label"] = *r.label;
  if (r.class_name) j["class_name"] = *r.class_name;
  return j;
}

inline SegmentRecord record_from_json(const nlohmann::json& j) {
  SegmentRecord r;
  r.video_id = j.at("video_id").get<std::string>();
  r.segment_index = j.at("segment_index").get<int>();
  r.frame_start = j.at("frame_start").get<int>();
  r.frame_end = j.at("frame_end").get<int>();
  if (j.contains("label")) r.label = j.at("label").get<int>();
  if (j.contains("class_name")) r.class_name = j.at("class_name").get<std::string>();
  const std::string g = j.value("granularity", "segment_level");
  if (g == "video_level")
    r.granularity = LabelGranularity::video_level;
  else if (g == "segment_level")
    r.granularity = LabelGranularity::segment_level;
  else
    throw io_error("unknown granularity '" + g + "'");
  return r;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Save / load

enum class BankFormat { binary, json };

// Writes <stem>.manifest.json + <stem>.bank.bin, or <stem>.bank.json.
inline void save_bank(const FeatureBank& bank, const std::filesystem::path& stem,
                      BankFormat format) {
  validate_bank(bank);
  namespace fs = std::filesystem;
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());

  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : bank.records) records.push_back(detail::record_to_json(r));

  if (format == BankFormat::json) {
    nlohmann::json j{{"schema_version", kBankSchemaVersion},
                     {"meta", detail::meta_to_json(bank.meta)},
                     {"records", records}};
    nlohmann::json heads = nlohmann::json::array();
    for (const auto& [id, feat] : bank.head_features) {
      heads.push_back({{"layer", id.layer}, {"head", id.head}, {"values", feat.data}});
    }
    j["heads"] = heads;
    j["context"] = bank.context.data;
    std::ofstream out(fs::path(stem).concat(".bank.json"));
    if (!out) throw io_error("cannot write " + stem.string() + ".bank.json");
    out << j.dump(2) << "\n";
    return;
  }

  const std::size_t n = bank.n_segments();
  std::uint64_t offset = 0;
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& [id, feat] : bank.head_features) {
    heads.push_back({{"layer", id.layer}, {"head", id.head}, {"offset", offset}});
    offset += feat.size() * sizeof(float);
  }
  nlohmann::json manifest{{"schema_version", kBankSchemaVersion},
                          {"meta", detail::meta_to_json(bank.meta)},
                          {"records", records},
                          {"heads", heads},
                          {"context_offset", offset},
                          {"payload_bytes", offset + bank.context.size() * sizeof(float)},
                          {"n_segments", n}};

  std::ofstream mout(fs::path(stem).concat(".manifest.json"));
  if (!mout) throw io_error("cannot write " + stem.string() + ".manifest.json");
  mout << manifest.dump(2) << "\n";

  std::ofstream bout(fs::path(stem).concat(".bank.bin"), std::ios::binary);
  if (!bout) throw io_error("cannot write " + stem.string() + ".bank.bin");
  for (const auto& [id, feat] : bank.head_features)
    bout.write(reinterpret_cast<const char*>(feat.data.data()),
               static_cast<std::streamsize>(feat.size() * sizeof(float)));
  bout.write(reinterpret_cast<const char*>(bank.context.data.data()),
             static_cast<std::streamsize>(bank.context.size() * sizeof(float)));
  if (!bout) throw io_error("short write to " + stem.string() + ".bank.bin");
}

namespace detail {

inline FeatureBank load_bank_json(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw io_error("cannot open " + file.string());
  nlohmann::json j;
  in >> j;
  const int version = j.at("schema_version").get<int>();
  if (version != kBankSchemaVersion)
    throw io_error("bank schema_version " + std::to_string(version) + " unsupported");
  FeatureBank bank;
  bank.meta = meta_from_json(j.at("meta"));
  for (const auto& rj : j.at("records")) bank.records.push_back(record_from_json(rj));
  const std::size_t n = bank.records.size();
  bank.context.rows = n;
  bank.context.cols = static_cast<std::size_t>(bank.meta.d_model);
  bank.context.data = j.at("context").get<std::vector<float>>();
  if (bank.context.data.size() != n * bank.context.cols)
    throw io_error("context payload length mismatch in " + file.string());
  for (const auto& hj : j.at("heads")) {
    HeadId id{hj.at("layer").get<int>(), hj.at("head").get<int>()};
    Mat<float> feat;
    feat.rows = n;
    feat.cols = static_cast<std::size_t>(bank.meta.d_head);
    feat.data = hj.at("values").get<std::vector<float>>();
    if (feat.data.size() != n * feat.cols)
      throw io_error("head " + to_string(id) + " payload length mismatch");
    bank.head_features.emplace(id, std::move(feat));
  }
  validate_bank(bank);
  return bank;
}

inline FeatureBank load_bank_binary(const std::filesystem::path& manifest_file) {
  std::ifstream min(manifest_file);
  if (!min) throw io_error("cannot open " + manifest_file.string());
  nlohmann::json j;
  min >> j;
  const int version = j.at("schema_version").get<int>();
  if (version != kBankSchemaVersion)
    throw io_error("bank schema_version " + std::to_string(version) + " unsupported");

  FeatureBank bank;
  bank.meta = meta_from_json(j.at("meta"));
  for (const auto& rj : j.at("records")) bank.records.push_back(record_from_json(rj));
  const std::size_t n = bank.records.size();
  if (j.contains("n_segments") && j.at("n_segments").get<std::size_t>() != n)
    throw io_error("manifest n_segments disagrees with record list");

  std::string bin_file = manifest_file.string();
  const std::string suffix = ".manifest.json";
  bin_file = bin_file.substr(0, bin_file.size() - suffix.size()) + ".bank.bin";
  std::ifstream bin(bin_file, std::ios::binary);
  if (!bin) throw io_error("cannot open " + bin_file);
  bin.seekg(0, std::ios::end);
  const std::uint64_t actual_bytes = static_cast<std::uint64_t>(bin.tellg());
  bin.seekg(0, std::ios::beg);

  const std::uint64_t declared = j.at("payload_bytes").get<std::uint64_t>();
  if (declared != actual_bytes)
    throw io_error("payload is " + std::to_string(actual_bytes) + " bytes, manifest declares " +
                   std::to_string(declared));

  const std::size_t head_block = n * static_cast<std::size_t>(bank.meta.d_head);
  for (const auto& hj : j.at("heads")) {
    HeadId id{hj.at("layer").get<int>(), hj.at("head").get<int>()};
    const std::uint64_t offset = hj.at("offset").get<std::uint64_t>();
    if (offset + head_block * sizeof(float) > actual_bytes)
      throw io_error("head " + to_string(id) + " block extends past payload end");
    Mat<float> feat(n, static_cast<std::size_t>(bank.meta.d_head));
    bin.seekg(static_cast<std::streamoff>(offset));
    bin.read(reinterpret_cast<char*>(feat.data.data()),
             static_cast<std::streamsize>(head_block * sizeof(float)));
    if (!bin) throw io_error("short read in head " + to_string(id));
    bank.head_features.emplace(id, std::move(feat));
  }

  const std::uint64_t context_offset = j.at("context_offset").get<std::uint64_t>();
  const std::size_t context_block = n * static_cast<std::size_t>(bank.meta.d_model);
  if (context_offset + context_block * sizeof(float) != actual_bytes)
    throw io_error("context block size disagrees with payload length");
  bank.context = Mat<float>(n, static_cast<std::size_t>(bank.meta.d_model));
  bin.seekg(static_cast<std::streamoff>(context_offset));
  bin.read(reinterpret_cast<char*>(bank.context.data.data()),
           static_cast<std::streamsize>(context_block * sizeof(float)));
  if (!bin) throw io_error("short read in context block");

  validate_bank(bank);
  return bank;
}

}  // namespace detail

// Accepts a stem, a .manifest.json path, or a .bank.json path.
inline FeatureBank load_bank(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  const std::string s = path.string();
  if (s.ends_with(".manifest.json")) return detail::load_bank_binary(path);
  if (s.ends_with(".bank.json")) return detail::load_bank_json(path);
  if (fs::exists(s + ".manifest.json")) return detail::load_bank_binary(s + ".manifest.json");
  if (fs::exists(s + ".bank.json")) return detail::load_bank_json(s + ".bank.json");
  throw io_error("no bank found at " + s + " (.manifest.json / .bank.json)");
}

// ---------------------------------------------------------------------------
// Record-subset helper: gathers rows `keep` (ascending) out of a bank.

inline FeatureBank gather_rows(const FeatureBank& bank, const std::vector<std::size_t>& keep) {
  FeatureBank out;
  out.meta = bank.meta;
  out.records.reserve(keep.size());
  for (std::size_t i : keep) out.records.push_back(bank.records[i]);
  out.context = Mat<float>(keep.size(), bank.context.cols);
  for (std::size_t r = 0; r < keep.size(); ++r)
    std::copy_n(bank.context.row(keep[r]), bank.context.cols, out.context.row(r));
  for (const auto& [id, feat] : bank.head_features) {
    Mat<float> sub(keep.size(), feat.cols);
    for (std::size_t r = 0; r < keep.size(); ++r)
      std::copy_n(feat.row(keep[r]), feat.cols, sub.row(r));
    out.head_features.emplace(id, std::move(sub));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Class balancing by undersampling only. ratio_normal is the requested
// fraction of normal segments in the output; hit within one sample. The
// output preserves the input record order (a deterministic subset).

inline FeatureBank balance_classes(const FeatureBank& bank, double ratio_normal,
                                   std::uint64_t seed) {
  if (!(ratio_normal > 0.0 && ratio_normal < 1.0))
    throw usage_error("ratio_normal must lie in (0,1)");
  if (!bank.labeled()) throw usage_error("balance_classes requires a labeled bank");

  std::vector<std::size_t> norm_rows, anom_rows;
  for (std::size_t i = 0; i < bank.records.size(); ++i)
    (*bank.records[i].label == 0 ? norm_rows : anom_rows).push_back(i);
  if (norm_rows.empty() || anom_rows.empty())
    throw usage_error("balance_classes requires both classes present");

  const auto n_norm = static_cast<double>(norm_rows.size());
  const auto n_anom = static_cast<double>(anom_rows.size());

  // Keep one class whole and undersample the other; exactly one of the two
  // options is feasible without duplication (up to rounding at the boundary).
  std::size_t keep_norm = 0, keep_anom = 0;
  const double anom_for_all_norm = n_norm * (1.0 - ratio_normal) / ratio_normal;
  const double norm_for_all_anom = n_anom * ratio_normal / (1.0 - ratio_normal);
  if (anom_for_all_norm <= n_anom + 0.5) {
    keep_norm = norm_rows.size();
    keep_anom = static_cast<std::size_t>(std::llround(anom_for_all_norm));
  } else {
    keep_anom = anom_rows.size();
    keep_norm = static_cast<std::size_t>(std::llround(norm_for_all_anom));
  }
  keep_norm = std::min(keep_norm, norm_rows.size());
  keep_anom = std::min(keep_anom, anom_rows.size());
  if (keep_norm == 0 || keep_anom == 0)
    throw usage_error("requested class ratio unreachable without duplication");

  seeded_shuffle(norm_rows, make_stream(seed, "balance", 0));
  seeded_shuffle(anom_rows, make_stream(seed, "balance", 1));
  std::vector<std::size_t> keep(norm_rows.begin(),
                                norm_rows.begin() + static_cast<std::ptrdiff_t>(keep_norm));
  keep.insert(keep.end(), anom_rows.begin(),
              anom_rows.begin() + static_cast<std::ptrdiff_t>(keep_anom));
  std::sort(keep.begin(), keep.end());
  return gather_rows(bank, keep);
}

// ---------------------------------------------------------------------------
// Uniform subsampling of ceil(fraction * N) units, without replacement.

enum class SampleUnit { video, segment };

inline FeatureBank subsample(const FeatureBank& bank, double fraction, SampleUnit unit,
                             std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw usage_error("subsample fraction must lie in (0,1]");
  if (fraction == 1.0 || bank.records.empty()) return bank;

  if (unit == SampleUnit::segment) {
    std::vector<std::size_t> rows(bank.records.size());
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
    seeded_shuffle(rows, make_stream(seed, "subsample_segment"));
    const auto keep_n = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(rows.size())));
    rows.resize(std::max<std::size_t>(1, keep_n));
    std::sort(rows.begin(), rows.end());
    return gather_rows(bank, rows);
  }

  std::vector<std::string> videos;  // first-appearance order
  std::set<std::string> seen;
  for (const auto& r : bank.records)
    if (seen.insert(r.video_id).second) videos.push_back(r.video_id);
  seeded_shuffle(videos, make_stream(seed, "subsample_video"));
  const auto keep_n = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(videos.size())));
  std::set<std::string> chosen(videos.begin(),
                               videos.begin() + static_cast<std::ptrdiff_t>(
                                                    std::max<std::size_t>(1, keep_n)));
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < bank.records.size(); ++i)
    if (chosen.count(bank.records[i].video_id)) keep.push_back(i);
  return gather_rows(bank, keep);
}

// ---------------------------------------------------------------------------
// Label coarsening: any video with an anomalous segment becomes all-anomalous.

inline FeatureBank coarsen_labels(const FeatureBank& bank) {
  if (!bank.labeled()) throw usage_error("coarsen_labels requires a labeled bank");
  std::set<std::string> anomalous_videos;
  for (const auto& r : bank.records)
    if (*r.label == 1) anomalous_videos.insert(r.video_id);
  FeatureBank out = bank;
  for (auto& r : out.records) {
    if (anomalous_videos.count(r.video_id)) r.label = 1;
    r.granularity = LabelGranularity::video_level;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Planted-manifold synthetic generator.
//
// Each class is a mixture of n_components_per_class Gaussians per head.
// Planted heads displace every anomalous component centroid by delta along a
// per-head unit direction; non-planted heads use identical mixtures for both
// classes. The context vector is a shared base plus a label-aligned direction
// scaled by context_signal, plus noise.
//
// `seed` drives only the sample draws. Mixture centroids and directions are
// a deterministic function of the bank geometry and the planted-head list,
// so banks generated from the same spec modulo `seed` share their manifolds
// and can serve as train/held-out pairs.

struct SynthSpec {
  BankMeta meta;
  std::size_t n_normal = 200;
  std::size_t n_anomalous = 200;
  std::vector<std::pair<HeadId, double>> planted_heads;  // (head, delta)
  int n_components_per_class = 2;
  double noise_sigma = 1.0;
  double context_signal = 4.0;
  std::uint64_t seed = 1;
  int segments_per_video = 6;
};

namespace detail {

// Geometry streams are keyed off a fixed tag, not the sampling seed.
constexpr std::uint64_t kGeometryKey = 0x67656F6D65747279ULL;  // "geometry"

inline std::vector<double> component_centroid(int d, std::uint64_t head_key, int component) {
  RngStream g = make_stream(kGeometryKey, "centroid", head_key,
                            static_cast<std::uint64_t>(component));
  std::vector<double> mu(static_cast<std::size_t>(d));
  // Centered at 1 so class manifolds sit away from the origin.
  for (auto& x : mu) x = 1.0 + g.next_normal();
  return mu;
}

inline std::vector<double> unit_direction(int d, std::uint64_t key, std::string_view tag) {
  RngStream g = make_stream(kGeometryKey, tag, key);
  std::vector<double> u(static_cast<std::size_t>(d));
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (auto& x : u) {
      x = g.next_normal();
      norm2 += x * x;
    }
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  for (auto& x : u) x *= inv;
  return u;
}

}  // namespace detail

inline FeatureBank synth_bank(const SynthSpec& spec) {
  const BankMeta& m = spec.meta;
  if (m.d_model <= 0 || m.d_head <= 0 || m.n_layers <= 0 || m.n_heads_per_layer <= 0)
    throw usage_error("synth_bank: meta dimensions must be positive");
  if (spec.noise_sigma <= 0.0) throw usage_error("synth_bank: noise_sigma must be positive");
  if (spec.n_components_per_class < 1)
    throw usage_error("synth_bank: need at least one mixture component");
  if (spec.segments_per_video < 1)
    throw usage_error("synth_bank: segments_per_video must be positive");
  for (const auto& [id, delta] : spec.planted_heads) {
    if (!m.valid_head(id))
      throw usage_error("synth_bank: planted head " + to_string(id) + " outside meta");
    if (delta < 0.0) throw usage_error("synth_bank: planted delta must be nonnegative");
  }

  const std::size_t n_total = spec.n_normal + spec.n_anomalous;
  if (n_total == 0) throw usage_error("synth_bank: empty sample counts");

  FeatureBank bank;
  bank.meta = m;
  bank.meta.source = "synthetic";

  // Records: consecutive single-label videos of segments_per_video segments.
  const int L = m.segment_len_frames;
  const int spv = spec.segments_per_video;
  auto emit_records = [&](std::size_t count, int label, const char* prefix) {
    for (std::size_t i = 0; i < count; ++i) {
      SegmentRecord r;
      const std::size_t video = i / static_cast<std::size_t>(spv);
      const int seg = static_cast<int>(i % static_cast<std::size_t>(spv));
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%s%04zu", prefix, video);
      r.video_id = buf;
      r.segment_index = seg;
      r.frame_start = seg * L;
      r.frame_end = (seg + 1) * L;
      r.label = label;
      if (label == 1) r.class_name = "anomaly";
      bank.records.push_back(std::move(r));
    }
  };
  emit_records(spec.n_normal, 0, "normal_");
  emit_records(spec.n_anomalous, 1, "anom_");

  // Per-sample mixture component, shared across heads (one underlying event).
  std::vector<int> component(n_total);
  {
    RngStream comp = make_stream(spec.seed, "component");
    for (std::size_t i = 0; i < n_total; ++i)
      component[i] = static_cast<int>(comp.next_below(
          static_cast<std::uint64_t>(spec.n_components_per_class)));
  }

  std::map<HeadId, double> planted;
  for (const auto& [id, delta] : spec.planted_heads) planted[id] = delta;

  // Head feature blocks are independent given the component assignment.
  std::vector<HeadId> all_heads;
  for (int l = 0; l < m.n_layers; ++l)
    for (int k = 0; k < m.n_heads_per_layer; ++k) all_heads.push_back({l, k});

  std::vector<Mat<float>> blocks(all_heads.size());
  parallel_for(all_heads.size(), [&](std::size_t hi) {
    const HeadId id = all_heads[hi];
    const std::uint64_t head_key =
        (static_cast<std::uint64_t>(id.layer) << 32) | static_cast<std::uint64_t>(id.head);
    std::vector<std::vector<double>> centroids;
    for (int cidx = 0; cidx < spec.n_components_per_class; ++cidx)
      centroids.push_back(detail::component_centroid(m.d_head, head_key, cidx));
    std::vector<double> dir;
    double delta = 0.0;
    if (auto it = planted.find(id); it != planted.end()) {
      delta = it->second;
      dir = detail::unit_direction(m.d_head, head_key, "plant_dir");
    }
    Mat<float> feat(n_total, static_cast<std::size_t>(m.d_head));
    for (std::size_t i = 0; i < n_total; ++i) {
      const int y = *bank.records[i].label;
      const auto& mu = centroids[static_cast<std::size_t>(component[i])];
      RngStream noise = make_stream(spec.seed, "head_noise", head_key, i);
      float* row = feat.row(i);
      for (int d = 0; d < m.d_head; ++d) {
        double x = mu[static_cast<std::size_t>(d)] + spec.noise_sigma * noise.next_normal();
        if (y == 1 && delta > 0.0) x += delta * dir[static_cast<std::size_t>(d)];
        row[d] = static_cast<float>(x);
      }
    }
    blocks[hi] = std::move(feat);
  });
  for (std::size_t hi = 0; hi < all_heads.size(); ++hi)
    bank.head_features.emplace(all_heads[hi], std::move(blocks[hi]));

  // Context: shared base + y * context_signal * u + noise.
  const std::vector<double> base =
      detail::component_centroid(m.d_model, 0xC0DEC0DEULL, 0);
  const std::vector<double> u = detail::unit_direction(m.d_model, 0xC0DEC0DEULL, "context_dir");
  bank.context = Mat<float>(n_total, static_cast<std::size_t>(m.d_model));
  for (std::size_t i = 0; i < n_total; ++i) {
    const int y = *bank.records[i].label;
    RngStream noise = make_stream(spec.seed, "context_noise", i);
    float* row = bank.context.row(i);
    for (int d = 0; d < m.d_model; ++d) {
      double x = base[static_cast<std::size_t>(d)] +
                 spec.noise_sigma * noise.next_normal() +
                 (y == 1 ? spec.context_signal * u[static_cast<std::size_t>(d)] : 0.0);
      row[d] = static_cast<float>(x);
    }
  }

  validate_bank(bank);
  return bank;
}

}  // namespace lsteer
