#include "birdtl/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "birdtl/error.hpp"

namespace birdtl {
namespace {

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatFloat = 3;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

class ByteReader {
 public:
  ByteReader(const std::vector<std::uint8_t>& bytes, const std::string& source)
      : bytes_(bytes), source_(source) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void seek(std::size_t pos) { pos_ = pos; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw DecodeError(source_ + ": truncated " + what + " at offset " + std::to_string(pos_));
    }
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    const auto* p = bytes_.data() + pos_;
    pos_ += 4;
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
           (std::uint32_t(p[3]) << 24);
  }

  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto* p = bytes_.data() + pos_;
    pos_ += 2;
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }

  std::string tag(const char* what) {
    need(4, what);
    std::string t(reinterpret_cast<const char*>(bytes_.data() + pos_), 4);
    pos_ += 4;
    return t;
  }

  const std::uint8_t* data() const { return bytes_.data() + pos_; }

 private:
  const std::vector<std::uint8_t>& bytes_;
  const std::string& source_;
  std::size_t pos_ = 0;
};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_tag(std::vector<std::uint8_t>& out, const char* tag) { out.insert(out.end(), tag, tag + 4); }

double kaiser(double x, double beta, double i0_beta) {
  // x in [-1, 1]
  const double arg = 1.0 - x * x;
  if (arg <= 0.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(arg)) / i0_beta;
}

}  // namespace

AudioClip decode_wav_bytes(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  ByteReader in(bytes, source);
  if (in.tag("RIFF header") != "RIFF") {
    throw DecodeError(source + ": missing RIFF tag at offset 0");
  }
  in.u32("RIFF size");
  if (in.tag("WAVE tag") != "WAVE") {
    throw DecodeError(source + ": missing WAVE tag at offset 8");
  }

  std::uint16_t format = 0, channels = 0, bits = 0, block_align = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const std::uint8_t* data = nullptr;
  std::size_t data_size = 0;

  while (in.remaining() >= 8) {
    const std::size_t chunk_offset = in.offset();
    const std::string id = in.tag("chunk id");
    const std::uint32_t size = in.u32("chunk size");
    if (size > in.remaining()) {
      if (id == "data") {
        // Some writers leave a bogus size on streamed data; take what is there.
        data = in.data();
        data_size = in.remaining();
        break;
      }
      throw DecodeError(source + ": chunk '" + id + "' at offset " + std::to_string(chunk_offset) +
                        " overruns file");
    }
    const std::size_t body = in.offset();
    if (id == "fmt ") {
      if (size < 16) {
        throw DecodeError(source + ": fmt chunk too small at offset " + std::to_string(chunk_offset));
      }
      format = in.u16("format tag");
      channels = in.u16("channel count");
      rate = in.u32("sample rate");
      in.u32("byte rate");
      block_align = in.u16("block align");
      bits = in.u16("bits per sample");
      if (format == kFormatExtensible && size >= 40) {
        in.u16("cb size");
        in.u16("valid bits");
        in.u32("channel mask");
        format = in.u16("sub format");
      }
      have_fmt = true;
    } else if (id == "data") {
      data = in.data();
      data_size = size;
    }
    in.seek(body + size + (size & 1u));
    if (in.offset() > bytes.size()) break;
  }

  if (!have_fmt) throw DecodeError(source + ": no fmt chunk found");
  if (data == nullptr) throw DecodeError(source + ": no data chunk found");
  if (channels == 0) throw DecodeError(source + ": zero channels in fmt chunk");
  if (rate == 0) throw DecodeError(source + ": zero sample rate in fmt chunk");

  const bool pcm16 = format == kFormatPcm && bits == 16;
  const bool f32 = format == kFormatFloat && bits == 32;
  if (!pcm16 && !f32) {
    throw UnsupportedFormatError(source + ": unsupported encoding (format " + std::to_string(format) +
                                 ", " + std::to_string(bits) + " bits)");
  }
  const std::size_t bytes_per_sample = bits / 8;
  const std::size_t frame_bytes = bytes_per_sample * channels;
  if (block_align != 0 && block_align != frame_bytes) {
    throw DecodeError(source + ": block align " + std::to_string(block_align) +
                      " inconsistent with format");
  }

  const std::size_t frames = data_size / frame_bytes;
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.source_path = source;
  clip.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t* p = data + f * frame_bytes + c * bytes_per_sample;
      if (pcm16) {
        const auto v = static_cast<std::int16_t>(p[0] | (p[1] << 8));
        acc += v / 32768.0;
      } else {
        float v;
        std::memcpy(&v, p, 4);
        if (!std::isfinite(v)) v = 0.0f;
        acc += std::clamp(static_cast<double>(v), -1.0, 1.0);
      }
    }
    clip.samples[f] = static_cast<float>(acc / channels);
  }
  return clip;
}

AudioClip decode_wav(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw DecodeError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());
  return decode_wav_bytes(bytes, path.string());
}

std::vector<std::uint8_t> encode_wav_bytes(const AudioClip& clip, WavEncoding encoding) {
  const std::uint16_t bits = encoding == WavEncoding::kPcm16 ? 16 : 32;
  const std::uint16_t format = encoding == WavEncoding::kPcm16 ? kFormatPcm : kFormatFloat;
  const std::uint32_t bytes_per_sample = bits / 8;
  const auto data_size = static_cast<std::uint32_t>(clip.samples.size() * bytes_per_sample);

  std::vector<std::uint8_t> out;
  out.reserve(44 + data_size);
  put_tag(out, "RIFF");
  put_u32(out, 36 + data_size);
  put_tag(out, "WAVE");
  put_tag(out, "fmt ");
  put_u32(out, 16);
  put_u16(out, format);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * bytes_per_sample);
  put_u16(out, static_cast<std::uint16_t>(bytes_per_sample));
  put_u16(out, bits);
  put_tag(out, "data");
  put_u32(out, data_size);
  for (float s : clip.samples) {
    if (encoding == WavEncoding::kPcm16) {
      const double scaled = std::round(static_cast<double>(s) * 32768.0);
      const auto v = static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
      put_u16(out, static_cast<std::uint16_t>(v));
    } else {
      std::uint32_t u;
      std::memcpy(&u, &s, 4);
      put_u32(out, u);
    }
  }
  return out;
}

void encode_wav(const std::filesystem::path& path, const AudioClip& clip, WavEncoding encoding) {
  const auto bytes = encode_wav_bytes(clip, encoding);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw Error("cannot write " + path.string());
  file.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

AudioClip resample(const AudioClip& clip, int target_rate) {
  if (target_rate <= 0) throw ConfigError("resample: target rate must be positive");
  if (clip.sample_rate <= 0) throw ConfigError("resample: source rate must be positive");
  if (target_rate == clip.sample_rate) return clip;

  constexpr int kTaps = 64;
  constexpr int kHalf = kTaps / 2;
  constexpr double kBeta = 8.0;
  const double i0_beta = std::cyl_bessel_i(0.0, kBeta);

  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  const double cutoff = std::min(1.0, ratio);  // relative to the source Nyquist
  const auto n_in = static_cast<std::ptrdiff_t>(clip.samples.size());
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * ratio));

  AudioClip out;
  out.sample_rate = target_rate;
  out.source_path = clip.source_path;
  out.samples.resize(n_out);

  for (std::size_t n = 0; n < n_out; ++n) {
    const double t = static_cast<double>(n) / ratio;
    const auto base = static_cast<std::ptrdiff_t>(std::floor(t));
    double acc = 0.0;
    for (std::ptrdiff_t k = base - kHalf + 1; k <= base + kHalf; ++k) {
      if (k < 0 || k >= n_in) continue;
      const double d = t - static_cast<double>(k);
      const double x = cutoff * d;
      const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
      acc += clip.samples[static_cast<std::size_t>(k)] * cutoff * sinc * kaiser(d / kHalf, kBeta, i0_beta);
    }
    out.samples[n] = static_cast<float>(std::clamp(acc, -1.0, 1.0));
  }
  return out;
}

}  // namespace birdtl
