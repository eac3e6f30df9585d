#include "birdtl/mel.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "birdtl/error.hpp"

namespace birdtl {
namespace {

double triangle_antiderivative(double x, double l, double c, double r) {
  if (x <= l) return 0.0;
  if (x <= c) return (x - l) * (x - l) / (2.0 * (c - l));
  if (x <= r) return (c - l) / 2.0 + ((r - c) * (r - c) - (r - x) * (r - x)) / (2.0 * (r - c));
  return (r - l) / 2.0;
}

// FFTW planning is not thread-safe; execution with new-array calls is.
struct Plan {
  fftw_plan plan = nullptr;
  ~Plan() {
    if (plan) fftw_destroy_plan(plan);
  }
};

std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

fftw_plan plan_for(int n_fft) {
  static std::map<int, std::unique_ptr<Plan>> plans;
  std::lock_guard lock(plan_mutex());
  auto& slot = plans[n_fft];
  if (!slot) {
    slot = std::make_unique<Plan>();
    double* in = fftw_alloc_real(static_cast<std::size_t>(n_fft));
    fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(n_fft / 2 + 1));
    slot->plan = fftw_plan_dft_r2c_1d(n_fft, in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
  }
  return slot->plan;
}

const MelFilterbank& cached_filterbank(const MelConfig& cfg) {
  static std::mutex m;
  static std::vector<std::unique_ptr<MelFilterbank>> cache;
  std::lock_guard lock(m);
  for (const auto& fb : cache) {
    if (fb->config() == cfg) return *fb;
  }
  cache.push_back(std::make_unique<MelFilterbank>(cfg));
  return *cache.back();
}

nlohmann::json config_to_json(const MelConfig& cfg) {
  return {{"n_mels", cfg.n_mels},   {"sample_rate", cfg.sample_rate}, {"win_length", cfg.win_length},
          {"hop_length", cfg.hop_length}, {"n_fft", cfg.n_fft},     {"fmin", cfg.fmin},
          {"fmax", cfg.fmax},       {"log_floor", cfg.log_floor}};
}

}  // namespace

void MelConfig::validate() const {
  if (n_mels < 1) throw ConfigError("mel config: n_mels must be >= 1");
  if (sample_rate <= 0) throw ConfigError("mel config: sample_rate must be positive");
  if (hop_length < 1) throw ConfigError("mel config: hop_length must be >= 1");
  if (win_length < 1 || win_length > n_fft) throw ConfigError("mel config: need 1 <= win_length <= n_fft");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0)) {
    throw ConfigError("mel config: need 0 <= fmin < fmax <= sample_rate/2");
  }
  if (!(log_floor > 0.0)) throw ConfigError("mel config: log_floor must be positive");
}

std::size_t MelConfig::frames_for(std::size_t n_samples) const {
  const auto win = static_cast<std::size_t>(win_length);
  if (n_samples < win) return 0;
  return (n_samples - win) / static_cast<std::size_t>(hop_length) + 1;
}

MelConfig preset(std::string_view name) {
  MelConfig cfg;
  if (name == "passt") {
    cfg.sample_rate = 16000;
    cfg.win_length = 400;
    cfg.hop_length = 160;
    cfg.n_fft = 512;
  } else if (name == "psla") {
    cfg.sample_rate = 32000;
    cfg.win_length = 800;
    cfg.hop_length = 320;
    cfg.n_fft = 1024;
  } else {
    throw ConfigError("unknown mel preset '" + std::string(name) + "' (expected passt or psla)");
  }
  cfg.n_mels = 128;
  cfg.fmin = 50.0;
  cfg.fmax = cfg.sample_rate / 2.0;
  cfg.log_floor = 1e-10;
  return cfg;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_edge_frequencies(const MelConfig& cfg) {
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.fmax);
  const double step = (hi - lo) / (cfg.n_mels + 1);
  std::vector<double> hz(static_cast<std::size_t>(cfg.n_mels) + 2);
  for (std::size_t i = 0; i < hz.size(); ++i) hz[i] = mel_to_hz(lo + step * static_cast<double>(i));
  hz.back() = cfg.fmax;
  hz.front() = cfg.fmin;
  return hz;
}

std::vector<double> mel_band_centers(const MelConfig& cfg) {
  const auto edges = mel_edge_frequencies(cfg);
  return {edges.begin() + 1, edges.end() - 1};
}

std::vector<double> mel_filterbank(const MelConfig& cfg) {
  cfg.validate();
  const auto edges = mel_edge_frequencies(cfg);
  const int n_bins = cfg.n_bins();
  const double df = static_cast<double>(cfg.sample_rate) / cfg.n_fft;
  std::vector<double> weights(static_cast<std::size_t>(cfg.n_mels) * n_bins, 0.0);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double l = edges[m], c = edges[m + 1], r = edges[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double a = k * df - df / 2.0;
      const double b = k * df + df / 2.0;
      if (b <= l || a >= r) continue;
      const double area = triangle_antiderivative(b, l, c, r) - triangle_antiderivative(a, l, c, r);
      weights[static_cast<std::size_t>(m) * n_bins + k] = area / df;
    }
  }
  return weights;
}

MelFilterbank::MelFilterbank(const MelConfig& cfg) : cfg_(cfg) {
  const auto dense = mel_filterbank(cfg);
  const int n_bins = cfg.n_bins();
  rows_.reserve(static_cast<std::size_t>(cfg.n_mels));
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double* row = dense.data() + static_cast<std::size_t>(m) * n_bins;
    int first = 0;
    while (first < n_bins && row[first] == 0.0) ++first;
    int last = n_bins - 1;
    while (last >= first && row[last] == 0.0) --last;
    Row r{first, {}};
    if (last >= first) r.weights.assign(row + first, row + last + 1);
    rows_.push_back(std::move(r));
  }
}

void MelFilterbank::apply(std::span<const double> energies, std::span<double> out) const {
  for (std::size_t m = 0; m < rows_.size(); ++m) {
    const auto& row = rows_[m];
    double acc = 0.0;
    for (std::size_t i = 0; i < row.weights.size(); ++i) {
      acc += row.weights[i] * energies[static_cast<std::size_t>(row.first_bin) + i];
    }
    out[m] = acc;
  }
}

MelSpectrogram mel_spectrogram(std::span<const float> samples, const MelConfig& cfg) {
  cfg.validate();
  if (samples.size() < static_cast<std::size_t>(cfg.win_length)) {
    throw ShapeError("mel_spectrogram: clip has " + std::to_string(samples.size()) +
                     " samples, shorter than the window (" + std::to_string(cfg.win_length) + ")");
  }
  const auto& fb = cached_filterbank(cfg);
  const std::size_t n_frames = cfg.frames_for(samples.size());
  const auto n_fft = static_cast<std::size_t>(cfg.n_fft);
  const auto win = static_cast<std::size_t>(cfg.win_length);
  const auto n_bins = static_cast<std::size_t>(cfg.n_bins());
  const auto n_mels = static_cast<std::size_t>(cfg.n_mels);

  std::vector<double> window(win);
  for (std::size_t n = 0; n < win; ++n) {
    window[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(win));
  }

  const fftw_plan plan = plan_for(cfg.n_fft);
  std::unique_ptr<double, decltype(&fftw_free)> frame(fftw_alloc_real(n_fft), &fftw_free);
  std::unique_ptr<fftw_complex, decltype(&fftw_free)> spectrum(fftw_alloc_complex(n_bins), &fftw_free);
  std::vector<double> power(n_bins), mel(n_mels);

  MelSpectrogram out;
  out.n_mels = n_mels;
  out.n_frames = n_frames;
  out.config = cfg;
  out.values.resize(n_mels * n_frames);

  for (std::size_t t = 0; t < n_frames; ++t) {
    const std::size_t start = t * static_cast<std::size_t>(cfg.hop_length);
    double* f = frame.get();
    for (std::size_t n = 0; n < win; ++n) f[n] = window[n] * samples[start + n];
    std::fill(f + win, f + n_fft, 0.0);
    fftw_execute_dft_r2c(plan, f, spectrum.get());
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double re = spectrum.get()[k][0];
      const double im = spectrum.get()[k][1];
      power[k] = re * re + im * im;
    }
    fb.apply(power, mel);
    for (std::size_t m = 0; m < n_mels; ++m) {
      out.values[m * n_frames + t] = static_cast<float>(std::log(mel[m] + cfg.log_floor));
    }
  }
  return out;
}

MelSpectrogram mel_spectrogram(const AudioClip& clip, const MelConfig& cfg) {
  if (clip.sample_rate != cfg.sample_rate) {
    throw ConfigError("mel_spectrogram: clip rate " + std::to_string(clip.sample_rate) +
                      " Hz does not match config rate " + std::to_string(cfg.sample_rate) + " Hz");
  }
  return mel_spectrogram(std::span<const float>(clip.samples), cfg);
}

std::string mel_config_json(const MelConfig& cfg) { return config_to_json(cfg).dump(); }

void save_golden(const std::filesystem::path& stem, const MelSpectrogram& spec) {
  static_assert(std::endian::native == std::endian::little, "golden writer assumes little-endian host");
  auto raw = stem;
  raw += ".f32";
  std::ofstream bin(raw, std::ios::binary | std::ios::trunc);
  if (!bin) throw Error("cannot write " + raw.string());
  bin.write(reinterpret_cast<const char*>(spec.values.data()),
            static_cast<std::streamsize>(spec.values.size() * sizeof(float)));

  nlohmann::json side = {{"shape", {spec.n_mels, spec.n_frames}},
                         {"dtype", "float32"},
                         {"byte_order", "little"},
                         {"config", config_to_json(spec.config)}};
  auto meta = stem;
  meta += ".json";
  std::ofstream js(meta, std::ios::trunc);
  if (!js) throw Error("cannot write " + meta.string());
  js << side.dump(2) << "\n";
}

MelSpectrogram load_golden(const std::filesystem::path& stem) {
  auto meta = stem;
  meta += ".json";
  std::ifstream js(meta);
  if (!js) throw Error("cannot open " + meta.string());
  const auto side = nlohmann::json::parse(js);
  MelSpectrogram spec;
  spec.n_mels = side.at("shape").at(0).get<std::size_t>();
  spec.n_frames = side.at("shape").at(1).get<std::size_t>();
  const auto& c = side.at("config");
  spec.config.n_mels = c.at("n_mels");
  spec.config.sample_rate = c.at("sample_rate");
  spec.config.win_length = c.at("win_length");
  spec.config.hop_length = c.at("hop_length");
  spec.config.n_fft = c.at("n_fft");
  spec.config.fmin = c.at("fmin");
  spec.config.fmax = c.at("fmax");
  spec.config.log_floor = c.at("log_floor");

  auto raw = stem;
  raw += ".f32";
  std::ifstream bin(raw, std::ios::binary);
  if (!bin) throw Error("cannot open " + raw.string());
  spec.values.resize(spec.n_mels * spec.n_frames);
  bin.read(reinterpret_cast<char*>(spec.values.data()),
           static_cast<std::streamsize>(spec.values.size() * sizeof(float)));
  if (bin.gcount() != static_cast<std::streamsize>(spec.values.size() * sizeof(float))) {
    throw DecodeError(raw.string() + ": golden blob shorter than its declared shape");
  }
  return spec;
}

}  // namespace birdtl
