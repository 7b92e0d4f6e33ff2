#include "mmttt/model.hpp"

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <type_traits>
#include <fstream>
#include <map>

#include "mmttt/errors.hpp"
#include "mmttt/ops.hpp"

namespace mmttt {

const char* partition_name(Partition p) {
  switch (p) {
    case Partition::kEncoder: return "encoder";
    case Partition::kDecoder: return "decoder";
    case Partition::kClassifier: return "classifier";
  }
  return "?";
}

ModelDims dims_from_header(const DatasetHeader& h) {
  return ModelDims{h.d_t, h.d_i, h.d_v, h.d_a, h.V};
}

Model Model::init(const ModelDims& dims, const ModelConfig& config, std::uint64_t seed) {
  if (config.heads == 0 || config.d_model % config.heads != 0)
    throw ConfigError("d_model must be divisible by the head count");
  if (config.depth == 0 || config.d_ff == 0) throw ConfigError("depth and d_ff must be >= 1");
  Rng rng(seed);
  Model m;
  m.dims = dims;
  m.config = config;
  m.encoder = EncoderParams::init(dims, config, rng);
  m.dec_at = DecoderParams::init(dims, config, rng);
  m.dec_it = DecoderParams::init(dims, config, rng);
  m.fusion = FusionParams::init(dims, config, rng);
  m.classifier = ClassifierParams::init(config, rng);
  return m;
}

Model Model::clone() const {
  Model copy = init(dims, config, 0);
  auto src = parameters();
  auto dst = copy.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) {
    auto from = src[i].tensor.values();
    std::copy(from.begin(), from.end(), dst[i].tensor.mutable_values().begin());
  }
  return copy;
}

std::vector<NamedTensor> Model::parameters(Partition p) const {
  std::vector<NamedTensor> out;
  switch (p) {
    case Partition::kEncoder: encoder.collect(out); break;
    case Partition::kDecoder:
      dec_at.collect("decoder_at", out);
      dec_it.collect("decoder_it", out);
      break;
    case Partition::kClassifier:
      fusion.collect(out);
      classifier.collect(out);
      break;
  }
  return out;
}

std::vector<NamedTensor> Model::parameters() const {
  std::vector<NamedTensor> out;
  for (auto p : {Partition::kEncoder, Partition::kDecoder, Partition::kClassifier}) {
    auto part = parameters(p);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

void Model::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

std::string Model::checksum(Partition p) const {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* data, std::size_t len) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      hash ^= bytes[i];
      hash *= 0x100000001b3ULL;
    }
  };
  for (const auto& named : parameters(p)) {
    mix(named.name.data(), named.name.size());
    auto values = named.tensor.values();
    mix(values.data(), values.size() * sizeof(double));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

Model::Snapshot Model::snapshot(Partition p) const {
  Snapshot snap;
  for (const auto& named : parameters(p))
    snap.emplace_back(named.tensor.values().begin(), named.tensor.values().end());
  return snap;
}

void Model::restore(Partition p, const Snapshot& snap) {
  auto params = parameters(p);
  if (params.size() != snap.size()) throw UsageError("restore: snapshot does not match partition");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor.mutable_values();
    if (dst.size() != snap[i].size()) throw UsageError("restore: snapshot tensor size mismatch");
    std::copy(snap[i].begin(), snap[i].end(), dst.begin());
  }
}

// ---------------------------------------------------------------------------

namespace {

Tensor matrix_tensor(const Matrix& m) { return Tensor::from({m.rows, m.cols}, m.data); }

}  // namespace

ForwardResult forward(const Model& model, const VideoSample& sample, const ForwardOptions& options) {
  const Ablation& ab = options.ablation;
  const bool use_audio = !ab.no_a;
  const bool use_visual = !ab.no_v;

  const Tensor text = project_text(matrix_tensor(sample.text_feat), model.encoder);
  MaskedBatch masked;
  if (options.mask_ratio > 0.0) {
    if (!options.rng) throw UsageError("forward: masking requested without an rng");
    masked = apply_mask(text, sample.token_ids, options.mask_ratio, model.encoder.mask_embedding,
                        *options.rng);
  } else {
    masked.masked_text_feat = text;
  }

  EncoderOutput enc;
  if (ab.no_trans) {
    const Tensor query = text_query(masked);
    if (use_audio) enc.audio_text = query;
    if (use_visual) enc.visual_text = query;
  } else {
    EncodeOptions eo;
    eo.audio_branch = use_audio;
    eo.visual_branch = use_visual;
    enc = encode(masked, matrix_tensor(sample.audio_feat), matrix_tensor(sample.keyframe_feat),
                 model.encoder, eo);
  }

  ForwardResult result;
  result.mask_positions = masked.mask_positions;
  result.target_ids = masked.target_ids;
  if (options.compute_mlm && !masked.mask_positions.empty()) {
    result.mlm_loss = mlm_loss(enc.audio_text, enc.visual_text, masked.mask_positions,
                               masked.target_ids, model.dec_at, model.dec_it);
  }

  if (options.compute_detection) {
    const std::size_t d = model.config.d_model;
    FusionInputs in;
    in.audio_text = use_audio ? pool_sequence(enc.audio_text) : Tensor::zeros({1, d});
    in.visual_text = use_visual ? pool_sequence(enc.visual_text) : Tensor::zeros({1, d});
    in.motion = Tensor::row(aggregate_motion(sample.motion_feat));
    in.comments = Tensor::row(aggregate_comments(sample.comment_feats, sample.comment_likes, model.dims.d_text));
    in.publisher = Tensor::row(sample.publisher_feat);
    result.p_fake = classify(fuse(in, model.fusion), model.classifier);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoint archive: little-endian, fixed field order.

namespace {

constexpr char kMagic[8] = {'M', 'M', 'T', 'T', 'T', 'C', 'K', 'P'};

template <typename T>
void put(std::ostream& out, T value) {
  static_assert(std::is_integral_v<T> || std::is_floating_point_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) throw DataError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  for (std::uint64_t v : {model.dims.d_text, model.dims.d_keyframe, model.dims.d_motion,
                          model.dims.d_audio, model.dims.vocab})
    put<std::uint64_t>(out, v);
  for (std::uint64_t v : {model.config.d_model, model.config.heads, model.config.d_ff, model.config.depth})
    put<std::uint64_t>(out, v);
  std::vector<std::pair<Partition, NamedTensor>> all;
  for (auto p : {Partition::kEncoder, Partition::kDecoder, Partition::kClassifier})
    for (auto& named : model.parameters(p)) all.emplace_back(p, named);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(all.size()));
  for (const auto& [partition, named] : all) {
    put<std::uint8_t>(out, static_cast<std::uint8_t>(partition));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(named.name.size()));
    out.write(named.name.data(), static_cast<std::streamsize>(named.name.size()));
    const auto& shape = named.tensor.shape();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (auto extent : shape) put<std::uint64_t>(out, extent);
    for (double v : named.tensor.values()) put<double>(out, v);
  }
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw DataError(path.string() + " is not a checkpoint archive");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  ModelDims dims;
  dims.d_text = get<std::uint64_t>(in);
  dims.d_keyframe = get<std::uint64_t>(in);
  dims.d_motion = get<std::uint64_t>(in);
  dims.d_audio = get<std::uint64_t>(in);
  dims.vocab = get<std::uint64_t>(in);
  ModelConfig cfg;
  cfg.d_model = get<std::uint64_t>(in);
  cfg.heads = get<std::uint64_t>(in);
  cfg.d_ff = get<std::uint64_t>(in);
  cfg.depth = get<std::uint64_t>(in);
  Model model = Model::init(dims, cfg, 0);

  std::map<std::string, std::pair<Partition, Tensor>> by_name;
  for (auto p : {Partition::kEncoder, Partition::kDecoder, Partition::kClassifier})
    for (auto& named : model.parameters(p)) by_name.emplace(named.name, std::make_pair(p, named.tensor));

  const auto count = get<std::uint32_t>(in);
  if (count != by_name.size())
    throw DataError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                    std::to_string(by_name.size()));
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto partition = static_cast<Partition>(get<std::uint8_t>(in));
    std::string name(get<std::uint32_t>(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw DataError("checkpoint truncated");
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint has unknown tensor '" + name + "'");
    if (it->second.first != partition) throw DataError("checkpoint tensor '" + name + "' has the wrong partition");
    Shape shape(get<std::uint32_t>(in));
    for (auto& extent : shape) extent = get<std::uint64_t>(in);
    Tensor& t = it->second.second;
    if (shape != t.shape())
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                      shape_str(t.shape()));
    auto values = t.mutable_values();
    for (auto& v : values) v = get<double>(in);
    check_finite(values, "load_checkpoint");
  }
  return model;
}

}  // namespace mmttt
