#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "birdtl/audio.hpp"

namespace testing {

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("birdtl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline birdtl::AudioClip sine(double freq, double seconds, int rate, double amp = 0.5) {
  birdtl::AudioClip c;
  c.sample_rate = rate;
  const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
  c.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    c.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * freq * static_cast<double>(i) / rate));
  }
  return c;
}

// Frequency of the largest bin of a plain O(n^2) DFT magnitude (positive half).
inline double dft_peak_hz(const std::vector<float>& x, int rate) {
  const std::size_t n = x.size();
  double best = -1.0;
  std::size_t arg = 0;
  for (std::size_t k = 1; k < n / 2; ++k) {
    std::complex<double> acc;
    for (std::size_t t = 0; t < n; ++t) {
      acc += static_cast<double>(x[t]) * std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(k * t % n) / n);
    }
    if (std::abs(acc) > best) {
      best = std::abs(acc);
      arg = k;
    }
  }
  return static_cast<double>(arg) * rate / static_cast<double>(n);
}

}  // namespace testing
