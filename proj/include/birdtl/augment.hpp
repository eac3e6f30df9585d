#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "birdtl/audio.hpp"
#include "birdtl/rng.hpp"

namespace birdtl {

using LabelVector = std::vector<double>;

struct AugmentConfig {
  double mixup_prob = 0.6;
  double mixup_alpha = 0.2;
  double noise_prob = 0.5;
  double noise_snr_db_min = -5.0;
  double noise_snr_db_max = 20.0;
  std::uint64_t seed = 0;

  void validate() const;
  static AugmentConfig disabled() {
    AugmentConfig c;
    c.mixup_prob = 0.0;
    c.noise_prob = 0.0;
    return c;
  }
};

struct MixResult {
  AudioClip clip;
  LabelVector labels;
};

// samples = lam*x1 + (1-lam)*x2, labels likewise.
MixResult mixup(const AudioClip& x1, const LabelVector& y1, const AudioClip& x2, const LabelVector& y2, double lam);

// Beta(alpha, alpha) via two gamma draws.
double draw_lam(double alpha, Rng& rng);

double rms(std::span<const float> x);

// Adds a window of `noise` starting at `offset` (wrapping if the noise is shorter)
// scaled so the signal-to-noise ratio is snr_db; clips to [-1, 1].
// Zero-RMS signals or noise leave x unchanged.
AudioClip mix_noise(const AudioClip& x, const AudioClip& noise, double snr_db, std::size_t offset = 0);
double noise_gain(double signal_rms, double noise_rms, double snr_db);

struct AugmentItem {
  AudioClip clip;
  LabelVector labels;
  bool mixed = false;
  bool noised = false;
};

// Batch augmentation on raw waveforms. Item i draws from its own stream
// derived from (cfg.seed, epoch, item_keys[i]), so results do not depend on
// batch scheduling. MixUp partners are drawn from the un-augmented batch.
std::vector<AugmentItem> apply(const std::vector<AugmentItem>& batch, const AugmentConfig& cfg,
                               std::span<const AudioClip> noise_bank, std::uint64_t epoch,
                               std::span<const std::uint64_t> item_keys);

}  // namespace birdtl
