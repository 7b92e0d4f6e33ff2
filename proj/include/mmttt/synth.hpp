#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mmttt/features.hpp"

namespace mmttt {

enum class Modality : std::size_t { kText, kKeyframe, kMotion, kAudio, kComment, kPublisher };
inline constexpr std::size_t kModalityCount = 6;
const char* modality_name(Modality m);

// Synthetic benchmark with a planted cross-modal label signal.
//
// Each video draws a latent z = signal·(2y−1)·c + N(0, I) in R^4. Token ids
// are sampled from softmax(token_coupling · E z), audio frames observe the
// first half of z and keyframes the second half, while motion, comments and
// publisher carry a weak view of all of z. Events at the end of the timeline
// (the last `shifted_event_fraction`) are test-side: every modality of their
// videos is offset by mu_shift[k] along a fixed per-modality direction plus
// a per-event N(0, sigma_shift[k]²) perturbation.
struct ShiftConfig {
  std::size_t n_events = 60;
  std::size_t samples_per_event = 20;
  double class_balance = 0.5;  // P(fake)
  // Indexed by Modality: text, keyframe, motion, audio, comment, publisher.
  std::array<double, kModalityCount> mu_shift = {1.0, 1.5, 0.5, 1.5, 0.5, 0.5};
  std::array<double, kModalityCount> sigma_shift = {0.1, 0.1, 0.1, 0.1, 0.1, 0.1};
  double signal = 1.0;
  double shifted_event_fraction = 0.2;
  double token_coupling = 1.0;
  double event_noise = 0.3;
  std::uint64_t seed = 0;
  DatasetHeader header;
};

// Throws ConfigError when the config breaks its invariants.
void validate_shift_config(const ShiftConfig& cfg);

Dataset synthesize_dataset(const ShiftConfig& cfg);

// Event ids that receive the test-side perturbation.
std::vector<std::string> shifted_event_ids(const ShiftConfig& cfg);

}  // namespace mmttt
