#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mmttt/encoder.hpp"
#include "mmttt/features.hpp"
#include "mmttt/fusion.hpp"

namespace mmttt {

// θ_e, θ_d, θ_c.
enum class Partition : std::uint8_t { kEncoder = 0, kDecoder = 1, kClassifier = 2 };
const char* partition_name(Partition p);

struct Ablation {
  bool no_ttt = false;
  bool no_mlm = false;    // no auxiliary task at all (implies no TTT)
  bool no_trans = false;  // no cross-modal units; decoders read the text sequence directly
  bool no_v = false;      // drop the keyframe branch
  bool no_a = false;      // drop the audio branch

  bool operator==(const Ablation&) const = default;
};

ModelDims dims_from_header(const DatasetHeader& header);

class Model {
 public:
  static Model init(const ModelDims& dims, const ModelConfig& config, std::uint64_t seed);

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  // Deep copy with independent parameter storage.
  Model clone() const;

  std::vector<NamedTensor> parameters(Partition p) const;
  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  // FNV-1a over names and value bytes, as 16 hex digits.
  std::string checksum(Partition p) const;

  using Snapshot = std::vector<std::vector<double>>;
  Snapshot snapshot(Partition p) const;
  void restore(Partition p, const Snapshot& snap);

  ModelDims dims;
  ModelConfig config;
  EncoderParams encoder;
  DecoderParams dec_at;
  DecoderParams dec_it;
  FusionParams fusion;
  ClassifierParams classifier;

 private:
  Model() = default;
};

struct ForwardOptions {
  double mask_ratio = 0.0;
  Rng* rng = nullptr;  // required when mask_ratio > 0
  bool compute_mlm = false;
  bool compute_detection = true;
  Ablation ablation;
};

struct ForwardResult {
  Tensor p_fake;    // 1×1, undefined unless compute_detection
  Tensor mlm_loss;  // 1×1, undefined unless compute_mlm
  std::vector<std::size_t> mask_positions;
  std::vector<std::size_t> target_ids;
};

// Full forward pass on one video. Masking applies only when mask_ratio > 0.
ForwardResult forward(const Model& model, const VideoSample& sample, const ForwardOptions& options);

inline constexpr std::uint32_t kCheckpointVersion = 1;
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mmttt
