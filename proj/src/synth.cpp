#include "mmttt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "mmttt/errors.hpp"

namespace mmttt {

namespace {

constexpr std::size_t kLatentDim = 4;
constexpr double kWeakCoupling = 0.25;
constexpr double kTextNoise = 0.5;
constexpr double kFrameNoise = 1.0;
constexpr std::int64_t kEpochBase = 1'600'000'000;
constexpr std::int64_t kEventSpan = 7 * 86'400;

using Rng = std::mt19937_64;

std::vector<double> gaussian_vector(Rng& rng, std::size_t n, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = normal(rng);
  return v;
}

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double sd = 1.0) {
  return Matrix(rows, cols, gaussian_vector(rng, rows * cols, sd));
}

// Fixed random structure shared by every sample of one seed.
struct World {
  Matrix token_latent;  // V×r, row per token id
  Matrix token_embedding;  // V×d_t
  Matrix audio_map;     // d_a×(r/2)
  Matrix keyframe_map;  // d_i×(r/2)
  Matrix motion_map;    // d_v×r
  Matrix comment_map;   // d_t×r
  Matrix publisher_map;  // d_t×r
  std::array<std::vector<double>, kModalityCount> shift_direction;
};

std::size_t modality_width(const DatasetHeader& h, Modality m) {
  switch (m) {
    case Modality::kText: return h.d_t;
    case Modality::kKeyframe: return h.d_i;
    case Modality::kMotion: return h.d_v;
    case Modality::kAudio: return h.d_a;
    case Modality::kComment: return h.d_t;
    case Modality::kPublisher: return h.d_t;
  }
  return 0;
}

World make_world(const ShiftConfig& cfg) {
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ULL + 17);
  const auto& h = cfg.header;
  World w;
  w.token_latent = gaussian_matrix(rng, h.V, kLatentDim);
  w.token_embedding = gaussian_matrix(rng, h.V, h.d_t);
  w.audio_map = gaussian_matrix(rng, h.d_a, kLatentDim / 2);
  w.keyframe_map = gaussian_matrix(rng, h.d_i, kLatentDim / 2);
  w.motion_map = gaussian_matrix(rng, h.d_v, kLatentDim);
  w.comment_map = gaussian_matrix(rng, h.d_t, kLatentDim);
  w.publisher_map = gaussian_matrix(rng, h.d_t, kLatentDim);
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    // Unit direction scaled by sqrt(width): a per-entry offset of order mu.
    const std::size_t d = modality_width(h, static_cast<Modality>(k));
    auto dir = gaussian_vector(rng, d);
    double norm = 0.0;
    for (double x : dir) norm += x * x;
    norm = std::sqrt(norm);
    for (auto& x : dir) x *= std::sqrt(static_cast<double>(d)) / norm;
    w.shift_direction[k] = std::move(dir);
  }
  return w;
}

// out = map · latent[first .. first+map.cols) · coupling
std::vector<double> observe(const Matrix& map, const std::array<double, kLatentDim>& z,
                            std::size_t first, double coupling) {
  std::vector<double> out(map.rows, 0.0);
  for (std::size_t r = 0; r < map.rows; ++r)
    for (std::size_t c = 0; c < map.cols; ++c) out[r] += coupling * map(r, c) * z[first + c];
  return out;
}

// Per-event offsets for every modality (nuisance, plus the shift on test-side events).
using EventOffsets = std::array<std::vector<double>, kModalityCount>;

EventOffsets event_offsets(const ShiftConfig& cfg, const World& w, Rng& rng, bool shifted) {
  EventOffsets off;
  for (std::size_t k = 0; k < kModalityCount; ++k) {
    const std::size_t d = modality_width(cfg.header, static_cast<Modality>(k));
    off[k] = gaussian_vector(rng, d, cfg.event_noise);
    const auto perturb = gaussian_vector(rng, d, cfg.sigma_shift[k]);
    if (shifted)
      for (std::size_t j = 0; j < d; ++j) off[k][j] += cfg.mu_shift[k] * w.shift_direction[k][j] + perturb[j];
  }
  return off;
}

void add_row_offset(Matrix& m, std::size_t r, std::span<const double> offset) {
  for (std::size_t c = 0; c < m.cols; ++c) m(r, c) += offset[c];
}

std::size_t first_shifted_event(const ShiftConfig& cfg) {
  const double shifted = std::round(cfg.shifted_event_fraction * static_cast<double>(cfg.n_events));
  return cfg.n_events - static_cast<std::size_t>(shifted);
}

std::string event_name(std::size_t e) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "ev%04zu", e);
  return buf;
}

}  // namespace

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kText: return "text";
    case Modality::kKeyframe: return "keyframe";
    case Modality::kMotion: return "motion";
    case Modality::kAudio: return "audio";
    case Modality::kComment: return "comment";
    case Modality::kPublisher: return "publisher";
  }
  return "?";
}

void validate_shift_config(const ShiftConfig& cfg) {
  if (!(cfg.class_balance > 0.0 && cfg.class_balance < 1.0))
    throw ConfigError("class_balance must lie in (0, 1)");
  for (double s : cfg.sigma_shift)
    if (!(s > 0.0)) throw ConfigError("sigma_shift entries must be > 0");
  if (cfg.n_events == 0 || cfg.samples_per_event == 0)
    throw ConfigError("n_events and samples_per_event must be >= 1");
  if (!(cfg.shifted_event_fraction >= 0.0 && cfg.shifted_event_fraction <= 1.0))
    throw ConfigError("shifted_event_fraction must lie in [0, 1]");
  if (cfg.signal < 0.0) throw ConfigError("signal must be >= 0");
  const auto& h = cfg.header;
  if (!validate_header(h).empty()) throw ConfigError("synthetic header is invalid");
  if (h.V < 2) throw ConfigError("synthetic vocabulary needs at least 2 ids");
  if (h.m_max < 1 || h.n_max < 1 || h.l_max < 1) throw ConfigError("max lengths must be >= 1");
}

std::vector<std::string> shifted_event_ids(const ShiftConfig& cfg) {
  std::vector<std::string> out;
  for (std::size_t e = first_shifted_event(cfg); e < cfg.n_events; ++e) out.push_back(event_name(e));
  return out;
}

Dataset synthesize_dataset(const ShiftConfig& cfg) {
  validate_shift_config(cfg);
  const auto& h = cfg.header;
  const World world = make_world(cfg);
  Rng rng(cfg.seed * 0xD1B54A32D192ED03ULL + 5);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::bernoulli_distribution fake(cfg.class_balance);
  std::geometric_distribution<std::int64_t> likes_dist(0.3);
  auto uniform_len = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };

  std::vector<std::size_t> usable_tokens;
  for (std::size_t v = 0; v < h.V; ++v)
    if (static_cast<std::int64_t>(v) != h.mask_token_id) usable_tokens.push_back(v);

  std::array<double, kLatentDim> class_dir;
  class_dir.fill(1.0 / std::sqrt(static_cast<double>(kLatentDim)));

  Dataset ds;
  ds.header = h;
  const std::size_t first_shifted = first_shifted_event(cfg);
  for (std::size_t e = 0; e < cfg.n_events; ++e) {
    const bool shifted = e >= first_shifted;
    const EventOffsets off = event_offsets(cfg, world, rng, shifted);
    for (std::size_t j = 0; j < cfg.samples_per_event; ++j) {
      FeatureRecord rec;
      auto& s = rec.sample;
      char vid[48];
      std::snprintf(vid, sizeof vid, "v%04zu_%03zu", e, j);
      s.video_id = vid;
      s.event_id = event_name(e);
      s.timestamp = kEpochBase + static_cast<std::int64_t>(e) * kEventSpan +
                    std::uniform_int_distribution<std::int64_t>(0, kEventSpan - 1)(rng);
      rec.label = fake(rng) ? kFake : kReal;

      std::array<double, kLatentDim> z;
      const double sign = rec.label == kFake ? 1.0 : -1.0;
      for (std::size_t i = 0; i < kLatentDim; ++i) z[i] = cfg.signal * sign * class_dir[i] + normal(rng);

      // Tokens and text features.
      const std::size_t l = uniform_len(std::max<std::size_t>(1, (h.l_max + 1) / 2), h.l_max);
      std::vector<double> logits(usable_tokens.size());
      for (std::size_t t = 0; t < usable_tokens.size(); ++t) {
        double dot = 0.0;
        for (std::size_t i = 0; i < kLatentDim; ++i) dot += world.token_latent(usable_tokens[t], i) * z[i];
        logits[t] = cfg.token_coupling * dot;
      }
      const double max_logit = *std::max_element(logits.begin(), logits.end());
      std::vector<double> weights(logits.size());
      for (std::size_t t = 0; t < logits.size(); ++t) weights[t] = std::exp(logits[t] - max_logit);
      std::discrete_distribution<std::size_t> token_dist(weights.begin(), weights.end());
      s.text_feat = Matrix(l, h.d_t);
      for (std::size_t p = 0; p < l; ++p) {
        const std::size_t tok = usable_tokens[token_dist(rng)];
        s.token_ids.push_back(static_cast<std::int64_t>(tok));
        for (std::size_t c = 0; c < h.d_t; ++c)
          s.text_feat(p, c) = world.token_embedding(tok, c) + kTextNoise * normal(rng);
        add_row_offset(s.text_feat, p, off[std::size_t(Modality::kText)]);
      }

      // Keyframes observe z[2:4]; motion is a weak view of all of z.
      const std::size_t m = uniform_len(std::min<std::size_t>(2, h.m_max), h.m_max);
      s.keyframe_feat = Matrix(m, h.d_i);
      s.motion_feat = Matrix(m, h.d_v);
      const auto key_mean = observe(world.keyframe_map, z, kLatentDim / 2, 1.0);
      const auto motion_mean = observe(world.motion_map, z, 0, kWeakCoupling);
      for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < h.d_i; ++c) s.keyframe_feat(r, c) = key_mean[c] + kFrameNoise * normal(rng);
        for (std::size_t c = 0; c < h.d_v; ++c) s.motion_feat(r, c) = motion_mean[c] + kFrameNoise * normal(rng);
        add_row_offset(s.keyframe_feat, r, off[std::size_t(Modality::kKeyframe)]);
        add_row_offset(s.motion_feat, r, off[std::size_t(Modality::kMotion)]);
      }

      // Audio observes z[0:2].
      const std::size_t n = uniform_len(std::max<std::size_t>(1, (h.n_max + 1) / 2), h.n_max);
      s.audio_feat = Matrix(n, h.d_a);
      const auto audio_mean = observe(world.audio_map, z, 0, 1.0);
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < h.d_a; ++c) s.audio_feat(r, c) = audio_mean[c] + kFrameNoise * normal(rng);
        add_row_offset(s.audio_feat, r, off[std::size_t(Modality::kAudio)]);
      }

      // Social context.
      const std::size_t k = uniform_len(0, h.k_max);
      s.comment_feats = k ? Matrix(k, h.d_t) : Matrix();
      const auto comment_mean = observe(world.comment_map, z, 0, kWeakCoupling);
      for (std::size_t r = 0; r < k; ++r) {
        for (std::size_t c = 0; c < h.d_t; ++c) s.comment_feats(r, c) = comment_mean[c] + kFrameNoise * normal(rng);
        add_row_offset(s.comment_feats, r, off[std::size_t(Modality::kComment)]);
        s.comment_likes.push_back(likes_dist(rng));
      }
      const auto pub_mean = observe(world.publisher_map, z, 0, kWeakCoupling);
      s.publisher_feat.resize(h.d_t);
      for (std::size_t c = 0; c < h.d_t; ++c)
        s.publisher_feat[c] = pub_mean[c] + kFrameNoise * normal(rng) + off[std::size_t(Modality::kPublisher)][c];

      ds.records.push_back(std::move(rec));
    }
  }
  return ds;
}

}  // namespace mmttt
