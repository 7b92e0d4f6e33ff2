#include "mmttt/features.hpp"

#include <algorithm>
#include <bit>
#include <iterator>
#include <optional>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mmttt/errors.hpp"

namespace mmttt {

using nlohmann::json;

namespace {

void check_matrix(std::vector<Violation>& out, const char* field, const Matrix& m,
                  std::size_t expected_cols) {
  if (m.data.size() != m.rows * m.cols) {
    out.push_back({field, "storage size does not match rows x cols"});
    return;
  }
  if (m.rows > 0 && m.cols != expected_cols) {
    std::ostringstream msg;
    msg << "width " << m.cols << " does not match header width " << expected_cols;
    out.push_back({field, msg.str()});
  }
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c)
      if (!std::isfinite(m(r, c))) {
        std::ostringstream msg;
        msg << "non-finite value at row " << r << ", col " << c;
        out.push_back({field, msg.str()});
      }
}

void check_length(std::vector<Violation>& out, const char* field, std::size_t value,
                  std::size_t lo, std::size_t hi) {
  if (value < lo || value > hi) {
    std::ostringstream msg;
    msg << "length " << value << " outside [" << lo << ", " << hi << "]";
    out.push_back({field, msg.str()});
  }
}

}  // namespace

std::vector<Violation> validate_header(const DatasetHeader& h) {
  std::vector<Violation> out;
  auto positive = [&](const char* name, std::size_t v) {
    if (v < 1) out.push_back({name, "must be >= 1"});
  };
  positive("d_t", h.d_t);
  positive("d_i", h.d_i);
  positive("d_v", h.d_v);
  positive("d_a", h.d_a);
  positive("V", h.V);
  positive("l_max", h.l_max);
  positive("m_max", h.m_max);
  positive("n_max", h.n_max);
  positive("k_max", h.k_max);
  if (h.mask_token_id < 0 || static_cast<std::size_t>(h.mask_token_id) >= h.V)
    out.push_back({"mask_token_id", "must lie in [0, V)"});
  if (h.format_version != kDatasetFormatVersion)
    out.push_back({"format_version", "unsupported version " + std::to_string(h.format_version)});
  return out;
}

std::vector<Violation> validate_record(const DatasetHeader& h, const FeatureRecord& record) {
  std::vector<Violation> out;
  const auto& s = record.sample;
  if (s.video_id.empty()) out.push_back({"video_id", "empty"});
  if (record.label != kReal && record.label != kFake) out.push_back({"label", "label not binary"});

  const std::size_t l = s.token_ids.size();
  check_length(out, "token_ids", l, 1, h.l_max);
  for (std::size_t i = 0; i < l; ++i) {
    const auto id = s.token_ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= h.V) {
      out.push_back({"token_ids", "token_ids out of range at position " + std::to_string(i)});
    } else if (id == h.mask_token_id) {
      out.push_back({"token_ids", "mask token id used at position " + std::to_string(i)});
    }
  }
  if (s.text_feat.rows != l) out.push_back({"text_feat", "row count differs from token_ids length"});
  check_matrix(out, "text_feat", s.text_feat, h.d_t);

  check_length(out, "keyframe_feat", s.keyframe_feat.rows, 1, h.m_max);
  check_matrix(out, "keyframe_feat", s.keyframe_feat, h.d_i);
  if (s.motion_feat.rows != s.keyframe_feat.rows)
    out.push_back({"motion_feat", "row count differs from keyframe_feat"});
  check_length(out, "motion_feat", s.motion_feat.rows, 1, h.m_max);
  check_matrix(out, "motion_feat", s.motion_feat, h.d_v);

  check_length(out, "audio_feat", s.audio_feat.rows, 1, h.n_max);
  check_matrix(out, "audio_feat", s.audio_feat, h.d_a);

  check_length(out, "comment_feats", s.comment_feats.rows, 0, h.k_max);
  check_matrix(out, "comment_feats", s.comment_feats, h.d_t);
  if (s.comment_likes.size() != s.comment_feats.rows)
    out.push_back({"comment_likes", "count differs from comment_feats rows"});
  for (auto likes : s.comment_likes)
    if (likes < 0) out.push_back({"comment_likes", "negative like count"});

  if (s.publisher_feat.size() != h.d_t)
    out.push_back({"publisher_feat", "width does not match d_t"});
  for (std::size_t c = 0; c < s.publisher_feat.size(); ++c)
    if (!std::isfinite(s.publisher_feat[c]))
      out.push_back({"publisher_feat", "non-finite value at col " + std::to_string(c)});
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr const char* kHeaderFile = "header.json";
constexpr const char* kRecordsFile = "records.jsonl";
constexpr const char* kSidecarFile = "records.f32bin";

json header_to_json(const DatasetHeader& h) {
  return json{{"d_t", h.d_t},     {"d_i", h.d_i},     {"d_v", h.d_v},
              {"d_a", h.d_a},     {"V", h.V},         {"l_max", h.l_max},
              {"m_max", h.m_max}, {"n_max", h.n_max}, {"k_max", h.k_max},
              {"mask_token_id", h.mask_token_id},     {"format_version", h.format_version}};
}

DatasetHeader header_from_json(const json& j) {
  static const char* keys[] = {"d_t",   "d_i",   "d_v",   "d_a",           "V",
                               "l_max", "m_max", "n_max", "k_max", "mask_token_id",
                               "format_version"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(keys), std::end(keys), key) == std::end(keys))
      throw DataError("header.json: unknown key '" + key + "'");
  }
  DatasetHeader h;
  try {
    h.d_t = j.at("d_t").get<std::size_t>();
    h.d_i = j.at("d_i").get<std::size_t>();
    h.d_v = j.at("d_v").get<std::size_t>();
    h.d_a = j.at("d_a").get<std::size_t>();
    h.V = j.at("V").get<std::size_t>();
    h.l_max = j.at("l_max").get<std::size_t>();
    h.m_max = j.at("m_max").get<std::size_t>();
    h.n_max = j.at("n_max").get<std::size_t>();
    h.k_max = j.at("k_max").get<std::size_t>();
    h.mask_token_id = j.at("mask_token_id").get<std::int64_t>();
    h.format_version = j.at("format_version").get<int>();
  } catch (const json::exception& e) {
    throw DataError(std::string("header.json: ") + e.what());
  }
  auto violations = validate_header(h);
  if (!violations.empty())
    throw DataError("header.json: " + violations[0].field + ": " + violations[0].message);
  return h;
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows; ++r) rows.push_back(std::vector<double>(m.row(r).begin(), m.row(r).end()));
  return rows;
}

Matrix matrix_from_json(const json& j) {
  if (!j.is_array()) throw std::runtime_error("expected a nested array");
  Matrix m;
  m.rows = j.size();
  for (const auto& row : j) {
    if (!row.is_array()) throw std::runtime_error("expected a nested array");
    if (m.data.empty() && m.cols == 0) m.cols = row.size();
    if (row.size() != m.cols) throw std::runtime_error("ragged matrix rows");
    for (const auto& v : row) m.data.push_back(v.get<double>());
  }
  return m;
}

// Little-endian float32 sidecar writer.
class SidecarWriter {
 public:
  explicit SidecarWriter(const std::filesystem::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw DataError("cannot open " + path.string() + " for writing");
  }

  json write(std::span<const double> values, std::size_t rows, std::size_t cols) {
    json ref{{"offset", offset_}, {"rows", rows}, {"cols", cols}};
    for (double v : values) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      unsigned char bytes[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                static_cast<unsigned char>(bits >> 16),
                                static_cast<unsigned char>(bits >> 24)};
      out_.write(reinterpret_cast<const char*>(bytes), 4);
    }
    offset_ += 4 * values.size();
    return ref;
  }

 private:
  std::ofstream out_;
  std::uint64_t offset_ = 0;
};

Matrix read_sidecar(const std::vector<unsigned char>& blob, const json& ref) {
  const auto offset = ref.at("offset").get<std::uint64_t>();
  const auto rows = ref.at("rows").get<std::size_t>();
  const auto cols = ref.at("cols").get<std::size_t>();
  if (offset + 4 * rows * cols > blob.size()) throw std::runtime_error("sidecar reference past end of records.f32bin");
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const unsigned char* b = blob.data() + offset + 4 * i;
    const std::uint32_t bits = std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) |
                               (std::uint32_t(b[2]) << 16) | (std::uint32_t(b[3]) << 24);
    m.data[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return m;
}

json record_to_json(const FeatureRecord& rec, SidecarWriter* sidecar) {
  const auto& s = rec.sample;
  auto mat = [&](const Matrix& m) {
    return sidecar ? sidecar->write(m.data, m.rows, m.cols) : matrix_to_json(m);
  };
  json j;
  j["video_id"] = s.video_id;
  j["event_id"] = s.event_id;
  j["timestamp"] = s.timestamp;
  j["label"] = rec.label;
  j["token_ids"] = s.token_ids;
  j["text_feat"] = mat(s.text_feat);
  j["keyframe_feat"] = mat(s.keyframe_feat);
  j["motion_feat"] = mat(s.motion_feat);
  j["audio_feat"] = mat(s.audio_feat);
  j["comment_feats"] = mat(s.comment_feats);
  j["comment_likes"] = s.comment_likes;
  j["publisher_feat"] = sidecar ? sidecar->write(s.publisher_feat, 1, s.publisher_feat.size())
                                : json(s.publisher_feat);
  return j;
}

FeatureRecord record_from_json(const json& j, const std::vector<unsigned char>* sidecar) {
  static const char* keys[] = {"video_id",      "event_id",    "timestamp",     "label",
                               "token_ids",     "text_feat",   "keyframe_feat", "motion_feat",
                               "audio_feat",    "comment_feats", "comment_likes", "publisher_feat"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(keys), std::end(keys), key) == std::end(keys))
      throw std::runtime_error("unknown field '" + key + "'");
  }
  auto mat = [&](const char* key) {
    const json& v = j.at(key);
    if (v.is_object()) {
      if (!sidecar) throw std::runtime_error(std::string(key) + " references records.f32bin, which is missing");
      return read_sidecar(*sidecar, v);
    }
    return matrix_from_json(v);
  };
  FeatureRecord rec;
  auto& s = rec.sample;
  s.video_id = j.at("video_id").get<std::string>();
  s.event_id = j.at("event_id").get<std::string>();
  s.timestamp = j.at("timestamp").get<std::int64_t>();
  rec.label = j.at("label").get<int>();
  s.token_ids = j.at("token_ids").get<std::vector<std::int64_t>>();
  s.text_feat = mat("text_feat");
  s.keyframe_feat = mat("keyframe_feat");
  s.motion_feat = mat("motion_feat");
  s.audio_feat = mat("audio_feat");
  s.comment_feats = mat("comment_feats");
  s.comment_likes = j.at("comment_likes").get<std::vector<std::int64_t>>();
  const json& pub = j.at("publisher_feat");
  s.publisher_feat = pub.is_object() ? mat("publisher_feat").data : pub.get<std::vector<double>>();
  return rec;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const Dataset& dataset, StorageMode mode) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / kHeaderFile);
    if (!out) throw DataError("cannot write " + (dir / kHeaderFile).string());
    out << header_to_json(dataset.header).dump(2) << '\n';
  }
  std::optional<SidecarWriter> sidecar;
  if (mode == StorageMode::kF32Sidecar) {
    sidecar.emplace(dir / kSidecarFile);
  } else {
    std::filesystem::remove(dir / kSidecarFile);
  }
  std::ofstream out(dir / kRecordsFile);
  if (!out) throw DataError("cannot write " + (dir / kRecordsFile).string());
  for (const auto& rec : dataset.records)
    out << record_to_json(rec, sidecar ? &*sidecar : nullptr).dump() << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  {
    std::ifstream in(dir / kHeaderFile);
    if (!in) throw DataError("missing " + (dir / kHeaderFile).string());
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw DataError(std::string("header.json: parse error: ") + e.what());
    }
    ds.header = header_from_json(j);
  }

  std::vector<unsigned char> sidecar;
  const bool has_sidecar = std::filesystem::exists(dir / kSidecarFile);
  if (has_sidecar) {
    std::ifstream in(dir / kSidecarFile, std::ios::binary);
    sidecar.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }

  std::ifstream in(dir / kRecordsFile);
  if (!in) throw DataError("missing " + (dir / kRecordsFile).string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    FeatureRecord rec;
    try {
      rec = record_from_json(json::parse(line), has_sidecar ? &sidecar : nullptr);
    } catch (const std::exception& e) {
      throw DataError("records.jsonl line " + std::to_string(line_no) + ": parse error: " + e.what());
    }
    auto violations = validate_record(ds.header, rec);
    if (!violations.empty()) {
      throw DataError("record '" + rec.sample.video_id + "' (line " + std::to_string(line_no) +
                      "): " + violations[0].field + ": " + violations[0].message);
    }
    ds.records.push_back(std::move(rec));
  }
  return ds;
}

std::vector<VideoSample> strip_labels(std::span<const FeatureRecord> records) {
  std::vector<VideoSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.sample);
  return out;
}

std::vector<double> aggregate_comments(const Matrix& comment_feats,
                                       std::span<const std::int64_t> comment_likes,
                                       std::size_t width) {
  std::vector<double> out(width, 0.0);
  const std::size_t k = comment_feats.rows;
  if (k == 0) return out;
  if (comment_feats.cols != width || comment_likes.size() != k)
    throw DimensionError("aggregate_comments: comment matrix / likes / width disagree");
  double total = 0.0;
  for (auto likes : comment_likes) total += static_cast<double>(likes) + 1.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double w = (static_cast<double>(comment_likes[i]) + 1.0) / total;
    for (std::size_t c = 0; c < width; ++c) out[c] += w * comment_feats(i, c);
  }
  return out;
}

std::vector<double> aggregate_motion(const Matrix& motion_feat) {
  if (motion_feat.rows == 0) throw UsageError("aggregate_motion: no motion frames");
  std::vector<double> out(motion_feat.cols, 0.0);
  for (std::size_t r = 0; r < motion_feat.rows; ++r)
    for (std::size_t c = 0; c < motion_feat.cols; ++c) out[c] += motion_feat(r, c);
  for (auto& v : out) v /= static_cast<double>(motion_feat.rows);
  return out;
}

}  // namespace mmttt
