#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "modest/embedding_store.hpp"
#include "modest/matrix.hpp"

namespace modest {

/// Recipe for a weakly-aligned paired dataset: shared latents observed
/// through fixed random projections, with controllable fractions of
/// distractor-blended (partial) and unrelated (mismatched) pairs.
struct SynthSpec {
  Index n_pairs = 0;
  Index latent_dim = 0;
  Index dim_x = 0;
  Index dim_y = 0;
  double noise_scale = 0.0;
  double partial_rate = 0.0;
  double partial_blend = 0.5;
  double mismatch_rate = 0.0;
  std::uint64_t seed = 0;
};

void validate(const SynthSpec& spec);

/// Draws the dataset. Quality labels record the exact per-row construction;
/// label counts are floor(rate * n) per category with the remainder matched.
/// Bitwise deterministic per seed.
PairedDataset generate(const SynthSpec& spec);

// The label ordering (matched mean cosine > partial > mismatched) is only
// guaranteed below this observation-noise level.
inline constexpr double kSeparabilityNoiseThreshold = 0.1;

struct SynthSummary {
  std::array<Index, 3> counts{};      // matched, partial, mismatched
  std::array<double, 3> mean_cosine{};  // 0 when the class is empty
  double separability_noise_threshold = kSeparabilityNoiseThreshold;
};

/// Per-label counts and mean paired cosine. Requires quality labels.
SynthSummary describe(const PairedDataset& ds);

SynthSpec synth_spec_from_json(const std::string& text);
std::string synth_spec_to_json(const SynthSpec& spec);

}  // namespace modest
