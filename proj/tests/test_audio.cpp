#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <fstream>

#include "birdtl/audio.hpp"
#include "birdtl/error.hpp"
#include "birdtl/manifest.hpp"
#include "support.hpp"

using namespace birdtl;

namespace {

// Deliberately separate from the library encoder.
std::vector<std::uint8_t> handmade_wav(const std::vector<std::int16_t>& interleaved, int channels, int rate) {
  std::vector<std::uint8_t> b;
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  };
  auto u16 = [&](std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v & 0xFF));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  const auto data = static_cast<std::uint32_t>(interleaved.size() * 2);
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  u32(36 + data);
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  u32(16);
  u16(1);
  u16(static_cast<std::uint16_t>(channels));
  u32(static_cast<std::uint32_t>(rate));
  u32(static_cast<std::uint32_t>(rate * channels * 2));
  u16(static_cast<std::uint16_t>(channels * 2));
  u16(16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  u32(data);
  for (auto s : interleaved) u16(static_cast<std::uint16_t>(s));
  return b;
}

}  // namespace

TEST_CASE("decode: one second of 16-bit silence") {
  const auto clip = decode_wav_bytes(handmade_wav(std::vector<std::int16_t>(16000, 0), 1, 16000));
  CHECK(clip.sample_rate == 16000);
  REQUIRE(clip.samples.size() == 16000);
  for (float s : clip.samples) CHECK(s == 0.0f);
}

TEST_CASE("decode: stereo +0.5/-0.5 averages to zero") {
  std::vector<std::int16_t> v;
  for (int i = 0; i < 1000; ++i) {
    v.push_back(16384);
    v.push_back(-16384);
  }
  const auto clip = decode_wav_bytes(handmade_wav(v, 2, 8000));
  REQUIRE(clip.samples.size() == 1000);
  for (float s : clip.samples) CHECK(s == 0.0f);
}

TEST_CASE("decode: 440 Hz fixture matches an independent writer sample by sample") {
  const double amp = 0.8;
  std::vector<std::int16_t> v(16000);
  for (int i = 0; i < 16000; ++i) {
    v[static_cast<std::size_t>(i)] =
        static_cast<std::int16_t>(std::lround(amp * 32767.0 * std::sin(2.0 * std::numbers::pi * 440.0 * i / 16000.0)));
  }
  const auto dir = testing::scratch_dir("audio_sine");
  const auto bytes = handmade_wav(v, 1, 16000);
  std::ofstream(dir / "sine.wav", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                          static_cast<std::streamsize>(bytes.size()));
  const auto clip = decode_wav(dir / "sine.wav");
  CHECK(clip.samples.front() == 0.0f);
  float mx = 0.0f;
  for (std::size_t i = 0; i < v.size(); ++i) {
    CHECK(clip.samples[i] == static_cast<float>(v[i] / 32768.0));
    mx = std::max(mx, clip.samples[i]);
  }
  CHECK(std::abs(mx - amp) < 1e-3);
}

TEST_CASE("decode: pcm16 round trip is exact") {
  std::mt19937 rng(3);
  std::uniform_int_distribution<int> d(-32768, 32767);
  AudioClip c;
  c.sample_rate = 22050;
  for (int i = 0; i < 5000; ++i) c.samples.push_back(static_cast<float>(d(rng) / 32768.0));
  const auto once = decode_wav_bytes(encode_wav_bytes(c, WavEncoding::kPcm16));
  const auto twice = decode_wav_bytes(encode_wav_bytes(once, WavEncoding::kPcm16));
  CHECK(once.samples == c.samples);
  CHECK(twice.samples == once.samples);
}

TEST_CASE("decode: float32 round trip and range") {
  AudioClip c = testing::sine(300.0, 0.1, 8000, 0.9);
  const auto back = decode_wav_bytes(encode_wav_bytes(c, WavEncoding::kFloat32));
  CHECK(back.samples == c.samples);
  CHECK(back.sample_rate == 8000);
}

TEST_CASE("decode: errors") {
  auto good = handmade_wav(std::vector<std::int16_t>(10, 0), 1, 16000);
  SUBCASE("bad riff tag names offset") {
    auto b = good;
    b[0] = 'X';
    try {
      decode_wav_bytes(b);
      FAIL("expected DecodeError");
    } catch (const DecodeError& e) {
      CHECK(std::string(e.what()).find("offset 0") != std::string::npos);
    }
  }
  SUBCASE("truncated header") {
    std::vector<std::uint8_t> b(good.begin(), good.begin() + 10);
    CHECK_THROWS_AS(decode_wav_bytes(b), DecodeError);
  }
  SUBCASE("24-bit pcm is unsupported") {
    auto b = good;
    b[34] = 24;  // bits per sample
    b[32] = 3;   // block align
    CHECK_THROWS_AS(decode_wav_bytes(b), UnsupportedFormatError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(decode_wav("/nonexistent/x.wav"), DecodeError); }
}

TEST_CASE("resample: lengths and identity") {
  const auto c = testing::sine(440.0, 3.0, 48000);
  CHECK(resample(c, 16000).samples.size() == 48000);
  const auto same = resample(c, 48000);
  CHECK(same.samples == c.samples);
  CHECK_THROWS_AS(resample(c, 0), ConfigError);
}

TEST_CASE("resample: 440 Hz peak survives 48k -> 16k") {
  const auto c = testing::sine(440.0, 0.25, 48000);
  const auto r = resample(c, 16000);
  const double bin = 16000.0 / static_cast<double>(r.samples.size());
  CHECK(std::abs(testing::dft_peak_hz(r.samples, 16000) - 440.0) <= bin);
}

TEST_CASE("resample: up then down keeps the spectral peak") {
  const auto c = testing::sine(1000.0, 0.25, 16000);
  const auto back = resample(resample(c, 32000), 16000);
  REQUIRE(back.samples.size() == c.samples.size());
  const double bin = 16000.0 / static_cast<double>(c.samples.size());
  CHECK(std::abs(testing::dft_peak_hz(back.samples, 16000) - testing::dft_peak_hz(c.samples, 16000)) <= bin);
}

TEST_CASE("resample: output stays within [-1, 1]") {
  AudioClip sq;
  sq.sample_rate = 44100;
  for (int i = 0; i < 4410; ++i) sq.samples.push_back((i / 50) % 2 ? 1.0f : -1.0f);
  for (float s : resample(sq, 16000).samples) CHECK(std::abs(s) <= 1.0f);
}

TEST_CASE("manifest: rows parse with labels and splits") {
  const LabelVocabulary vocab({"sp1", "sp2", "sp3"});
  const auto m = parse_manifest(
      "filepath,primary_label,secondary_labels,split\na.wav,sp1,,train\nb.wav,sp1,sp2;sp3,test\n", vocab);
  REQUIRE(m.recordings.size() == 2);
  CHECK(m.recordings[0].primary_label == vocab.id("sp1"));
  CHECK(m.recordings[0].secondary_labels.empty());
  CHECK(m.recordings[0].split == Split::kTrain);
  CHECK(m.recordings[1].secondary_labels == std::vector<ClassId>{vocab.id("sp2"), vocab.id("sp3")});
  CHECK(m.recordings[1].split == Split::kTest);
}

TEST_CASE("manifest: bad label on row 7 is reported") {
  const LabelVocabulary vocab({"sp1", "sp2"});
  std::string text = "filepath,primary_label,secondary_labels,split\n";
  for (int i = 1; i <= 10; ++i) {
    text += "f" + std::to_string(i) + ".wav," + (i == 7 ? "bogus" : "sp1") + ",,train\n";
  }
  try {
    parse_manifest(text, vocab);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 7") != std::string::npos);
    CHECK(msg.find("bogus") != std::string::npos);
  }
}

TEST_CASE("manifest: duplicates, bad header, primary as secondary") {
  const LabelVocabulary vocab({"sp1", "sp2"});
  const std::string h = "filepath,primary_label,secondary_labels,split\n";
  CHECK_THROWS_AS(parse_manifest(h + "a.wav,sp1,,train\na.wav,sp2,,train\n", vocab), ConfigError);
  CHECK_NOTHROW(parse_manifest(h + "a.wav,sp1,,train\na.wav,sp1,,test\n", vocab));
  CHECK_THROWS_AS(parse_manifest("path,label\n", vocab), ConfigError);
  CHECK_THROWS_AS(parse_manifest(h + "a.wav,sp1,sp1,train\n", vocab), ConfigError);
  CHECK_THROWS_AS(parse_manifest(h + "a.wav,sp1,,holdout\n", vocab), ConfigError);
}

TEST_CASE("manifest: loading is pure and round-trips") {
  const LabelVocabulary vocab({"sp2", "sp1"});
  const auto dir = testing::scratch_dir("manifest");
  const std::string text =
      "filepath,primary_label,secondary_labels,split\nx/a.wav,sp2,sp1,val\nb.wav,sp1,,train\n";
  std::ofstream(dir / "m.csv") << text;
  const auto a = load_manifest(dir / "m.csv", vocab);
  const auto b = load_manifest(dir / "m.csv", vocab);
  CHECK(a.recordings == b.recordings);
  CHECK(format_manifest(a.recordings, vocab) == text);
  CHECK(a.resolve(a.recordings[0]) == dir / "x/a.wav");
}

TEST_CASE("vocabulary: sorted, unique, reserved noise class") {
  const LabelVocabulary v({"zeta", "alpha"});
  CHECK(v.names() == std::vector<std::string>{"alpha", "noise", "zeta"});
  CHECK(v.noise_id() == 1);
  CHECK_THROWS_AS(LabelVocabulary({"a", "a"}), ConfigError);
  CHECK_THROWS_AS(v.id("beta"), ConfigError);
}
