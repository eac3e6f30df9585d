#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace birdtl {

// Mono audio, samples normalized to [-1, 1].
struct AudioClip {
  std::vector<float> samples;
  int sample_rate = 0;
  std::string source_path;

  double duration() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }
};

enum class WavEncoding { kPcm16, kFloat32 };

// Reads RIFF/WAVE PCM16 or IEEE float32. Multi-channel input is averaged to mono.
AudioClip decode_wav(const std::filesystem::path& path);
AudioClip decode_wav_bytes(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");

// Mono writer. PCM16 uses round(x * 32768) clamped, so a decoded PCM16 file
// re-encodes to identical sample codes.
std::vector<std::uint8_t> encode_wav_bytes(const AudioClip& clip, WavEncoding encoding = WavEncoding::kPcm16);
void encode_wav(const std::filesystem::path& path, const AudioClip& clip,
                WavEncoding encoding = WavEncoding::kPcm16);

// Band-limited windowed-sinc resampler (64 taps, Kaiser beta = 8).
// Output length is round(n * target / source); equal rates return a copy.
AudioClip resample(const AudioClip& clip, int target_rate);

}  // namespace birdtl
