#include "birdtl/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "birdtl/error.hpp"

namespace birdtl {

void AugmentConfig::validate() const {
  if (!(mixup_prob >= 0.0 && mixup_prob <= 1.0)) throw ConfigError("augment: mixup_prob must be in [0,1]");
  if (!(noise_prob >= 0.0 && noise_prob <= 1.0)) throw ConfigError("augment: noise_prob must be in [0,1]");
  if (!(mixup_alpha > 0.0)) throw ConfigError("augment: mixup_alpha must be positive");
  if (!(noise_snr_db_min <= noise_snr_db_max)) throw ConfigError("augment: empty SNR interval");
}

MixResult mixup(const AudioClip& x1, const LabelVector& y1, const AudioClip& x2, const LabelVector& y2,
                double lam) {
  if (x1.samples.size() != x2.samples.size()) throw ShapeError("mixup: clips differ in length");
  if (x1.sample_rate != x2.sample_rate) throw ShapeError("mixup: clips differ in sample rate");
  if (y1.size() != y2.size()) throw ShapeError("mixup: label vectors differ in length");
  if (!(lam >= 0.0 && lam <= 1.0)) throw ConfigError("mixup: lam must be in [0,1]");

  MixResult r;
  r.clip.sample_rate = x1.sample_rate;
  r.clip.source_path = x1.source_path;
  r.clip.samples.resize(x1.samples.size());
  for (std::size_t i = 0; i < x1.samples.size(); ++i) {
    r.clip.samples[i] = static_cast<float>(lam * x1.samples[i] + (1.0 - lam) * x2.samples[i]);
  }
  r.labels.resize(y1.size());
  for (std::size_t c = 0; c < y1.size(); ++c) r.labels[c] = lam * y1[c] + (1.0 - lam) * y2[c];
  return r;
}

double draw_lam(double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("draw_lam: alpha must be positive");
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double a = gamma(rng);
  const double b = gamma(rng);
  if (a + b <= 0.0) return 0.5;  // both underflowed for tiny alpha
  return a / (a + b);
}

double rms(std::span<const float> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

double noise_gain(double signal_rms, double noise_rms, double snr_db) {
  return signal_rms / (noise_rms * std::pow(10.0, snr_db / 20.0));
}

AudioClip mix_noise(const AudioClip& x, const AudioClip& noise, double snr_db, std::size_t offset) {
  if (noise.samples.empty() || (std::isinf(snr_db) && snr_db > 0)) return x;
  const std::size_t n = x.samples.size();
  std::vector<float> window(n);
  for (std::size_t i = 0; i < n; ++i) window[i] = noise.samples[(offset + i) % noise.samples.size()];
  const double sig = rms(x.samples);
  const double nrm = rms(window);
  if (sig <= 0.0 || nrm <= 0.0) return x;

  const double g = noise_gain(sig, nrm, snr_db);
  AudioClip out = x;
  for (std::size_t i = 0; i < n; ++i) {
    out.samples[i] = static_cast<float>(std::clamp(static_cast<double>(x.samples[i]) + g * window[i], -1.0, 1.0));
  }
  return out;
}

std::vector<AugmentItem> apply(const std::vector<AugmentItem>& batch, const AugmentConfig& cfg,
                               std::span<const AudioClip> noise_bank, std::uint64_t epoch,
                               std::span<const std::uint64_t> item_keys) {
  cfg.validate();
  if (item_keys.size() != batch.size()) throw ShapeError("augment::apply: one key per item required");
  std::vector<AugmentItem> out = batch;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    Rng rng = derive_rng(cfg.seed, {epoch, item_keys[i]});
    // Fixed draw order per item keeps streams aligned regardless of which branches fire.
    const bool do_mix = uniform01(rng) < cfg.mixup_prob;
    const std::size_t partner_draw = batch.size() > 1 ? uniform_index(rng, batch.size() - 1) : 0;
    const double lam = draw_lam(cfg.mixup_alpha, rng);
    const bool do_noise = uniform01(rng) < cfg.noise_prob;
    const double snr = uniform(rng, cfg.noise_snr_db_min, cfg.noise_snr_db_max);
    const std::size_t noise_pick = noise_bank.empty() ? 0 : uniform_index(rng, noise_bank.size());
    const std::uint64_t offset_draw = rng();

    if (do_mix && batch.size() > 1) {
      const std::size_t partner = partner_draw >= i ? partner_draw + 1 : partner_draw;
      auto mixed = mixup(batch[i].clip, batch[i].labels, batch[partner].clip, batch[partner].labels, lam);
      out[i].clip = std::move(mixed.clip);
      out[i].labels = std::move(mixed.labels);
      out[i].mixed = true;
    }
    if (do_noise && !noise_bank.empty()) {
      const auto& noise = noise_bank[noise_pick];
      const std::size_t span_len = noise.samples.size() > out[i].clip.samples.size()
                                       ? noise.samples.size() - out[i].clip.samples.size() + 1
                                       : noise.samples.size();
      const std::size_t offset = span_len > 0 ? static_cast<std::size_t>(offset_draw % span_len) : 0;
      out[i].clip = mix_noise(out[i].clip, noise, snr, offset);
      out[i].noised = true;
    }
  }
  return out;
}

}  // namespace birdtl
