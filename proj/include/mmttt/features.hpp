#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mmttt {

// Plain row-major feature matrix (data, not a graph node).
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
  bool operator==(const Matrix&) const = default;
};

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetHeader {
  std::size_t d_t = 32;  // text / comment / publisher width
  std::size_t d_i = 32;  // keyframe width
  std::size_t d_v = 16;  // motion width
  std::size_t d_a = 24;  // audio width
  std::size_t V = 64;    // vocabulary size
  std::size_t l_max = 16;
  std::size_t m_max = 6;
  std::size_t n_max = 10;
  std::size_t k_max = 5;
  std::int64_t mask_token_id = 63;
  int format_version = kDatasetFormatVersion;

  bool operator==(const DatasetHeader&) const = default;
};

// Everything known about one video except its label. Test-time adaptation
// only ever sees this type.
struct VideoSample {
  std::string video_id;
  std::string event_id;
  std::int64_t timestamp = 0;
  std::vector<std::int64_t> token_ids;  // l
  Matrix text_feat;                     // l×d_t
  Matrix keyframe_feat;                 // m×d_i
  Matrix motion_feat;                   // m×d_v
  Matrix audio_feat;                    // n×d_a
  Matrix comment_feats;                 // k×d_t
  std::vector<std::int64_t> comment_likes;
  std::vector<double> publisher_feat;  // d_t

  bool operator==(const VideoSample&) const = default;
};

enum Label : int { kReal = 0, kFake = 1 };

struct FeatureRecord {
  VideoSample sample;
  int label = kReal;

  bool operator==(const FeatureRecord&) const = default;
};

struct Dataset {
  DatasetHeader header;
  std::vector<FeatureRecord> records;
};

struct Violation {
  std::string field;
  std::string message;
};

std::vector<Violation> validate_header(const DatasetHeader& header);
// Every invariant breach of `record` against `header`, not just the first.
std::vector<Violation> validate_record(const DatasetHeader& header, const FeatureRecord& record);

enum class StorageMode { kJson, kF32Sidecar };

// Writes header.json and records.jsonl (plus records.f32bin in sidecar mode).
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset,
                   StorageMode mode = StorageMode::kJson);
// Parses and validates; throws DataError naming the line or the record and field.
Dataset load_dataset(const std::filesystem::path& dir);

std::vector<VideoSample> strip_labels(std::span<const FeatureRecord> records);

// Like-weighted comment vector: w_i = (likes_i + 1) / Σ_j (likes_j + 1).
// No comments gives the zero vector of `width`.
std::vector<double> aggregate_comments(const Matrix& comment_feats,
                                       std::span<const std::int64_t> comment_likes,
                                       std::size_t width);
// Column mean of the per-frame motion features.
std::vector<double> aggregate_motion(const Matrix& motion_feat);

}  // namespace mmttt
