#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "birdtl/audio.hpp"

namespace birdtl {

struct MelConfig {
  int n_mels = 128;
  int sample_rate = 16000;
  int win_length = 400;
  int hop_length = 160;
  int n_fft = 512;
  double fmin = 50.0;
  double fmax = 8000.0;
  double log_floor = 1e-10;

  void validate() const;  // throws ConfigError
  int n_bins() const { return n_fft / 2 + 1; }
  std::size_t frames_for(std::size_t n_samples) const;

  bool operator==(const MelConfig&) const = default;
};

// "passt" (16 kHz, 400/160/512) or "psla" (32 kHz, 800/320/1024), 128 bands each.
MelConfig preset(std::string_view name);

double hz_to_mel(double hz);  // HTK: 2595 log10(1 + f/700)
double mel_to_hz(double mel);

// Row-major [n_mels x n_frames] natural-log energies.
struct MelSpectrogram {
  std::vector<float> values;
  std::size_t n_mels = 0;
  std::size_t n_frames = 0;
  MelConfig config;

  float at(std::size_t band, std::size_t frame) const { return values[band * n_frames + frame]; }
};

// Band edge/center frequencies: n_mels + 2 points uniformly spaced in mel.
std::vector<double> mel_edge_frequencies(const MelConfig& cfg);
std::vector<double> mel_band_centers(const MelConfig& cfg);

// Dense [n_mels x n_bins] filter weights. Each FFT bin is treated as the
// interval [f_k - df/2, f_k + df/2] and receives the mean of the unit-peak
// triangle over that interval, so every filter overlaps at least one bin even
// where filters are narrower than the bin spacing.
std::vector<double> mel_filterbank(const MelConfig& cfg);

// Sparse view of the filterbank used by mel_spectrogram; shareable read-only.
class MelFilterbank {
 public:
  explicit MelFilterbank(const MelConfig& cfg);

  const MelConfig& config() const { return cfg_; }
  // energies: n_bins power values; out: n_mels filter outputs.
  void apply(std::span<const double> energies, std::span<double> out) const;

 private:
  struct Row {
    int first_bin;
    std::vector<double> weights;
  };
  MelConfig cfg_;
  std::vector<Row> rows_;
};

// Hann STFT power -> mel filterbank -> log(energy + floor). No centering or
// padding: frames = floor((n - win) / hop) + 1.
MelSpectrogram mel_spectrogram(std::span<const float> samples, const MelConfig& cfg);
MelSpectrogram mel_spectrogram(const AudioClip& clip, const MelConfig& cfg);

// Regression goldens: <stem>.f32 (little-endian float32) + <stem>.json (shape + config).
void save_golden(const std::filesystem::path& stem, const MelSpectrogram& spec);
MelSpectrogram load_golden(const std::filesystem::path& stem);

std::string mel_config_json(const MelConfig& cfg);

}  // namespace birdtl
