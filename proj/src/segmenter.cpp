#include "birdtl/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "birdtl/error.hpp"

namespace birdtl {
namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

AudioClip tile_to(const AudioClip& clip, std::size_t length) {
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.source_path = clip.source_path;
  out.samples.resize(length);
  for (std::size_t i = 0; i < length; ++i) out.samples[i] = clip.samples[i % clip.samples.size()];
  return out;
}

AudioClip slice(const AudioClip& clip, std::size_t start, std::size_t length) {
  AudioClip out;
  out.sample_rate = clip.sample_rate;
  out.source_path = clip.source_path;
  out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(start),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(start + length));
  return out;
}

}  // namespace

std::vector<Chunk> chunk(const AudioClip& clip, double stride, const std::string& parent) {
  if (clip.samples.empty()) throw ShapeError("chunk: empty clip");
  if (clip.sample_rate <= 0) throw ConfigError("chunk: clip has no sample rate");
  if (!(stride > 0.0)) throw ConfigError("chunk: stride must be positive");

  const auto length = static_cast<std::size_t>(std::llround(kChunkSeconds * clip.sample_rate));
  const auto step = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(stride * clip.sample_rate)));
  const std::size_t n = clip.samples.size();
  std::vector<Chunk> out;

  if (n < length) {
    out.push_back({parent, 0, 0.0, tile_to(clip, length)});
    return out;
  }
  std::size_t start = 0;
  for (; start + length <= n; start += step) {
    out.push_back({parent, out.size(), static_cast<double>(start) / clip.sample_rate, slice(clip, start, length)});
  }
  const std::size_t covered = (out.empty() ? 0 : static_cast<std::size_t>(
                                                      std::llround(out.back().start_time * clip.sample_rate))) +
                              length;
  if (covered < n) {
    const std::size_t tail = n - length;
    out.push_back({parent, out.size(), static_cast<double>(tail) / clip.sample_rate, slice(clip, tail, length)});
  }
  return out;
}

std::vector<double> frame_peak_energies(const MelSpectrogram& spec) {
  const auto centers = mel_band_centers(spec.config);
  std::vector<std::size_t> bands;
  for (std::size_t m = 0; m < centers.size(); ++m) {
    if (centers[m] >= 500.0 && centers[m] <= 10000.0) bands.push_back(m);
  }
  if (bands.empty()) throw ConfigError("energy detector: no mel bands centred in 500 Hz - 10 kHz");
  std::vector<double> peaks(spec.n_frames, -std::numeric_limits<double>::infinity());
  for (std::size_t m : bands) {
    for (std::size_t t = 0; t < spec.n_frames; ++t) peaks[t] = std::max(peaks[t], double(spec.at(m, t)));
  }
  return peaks;
}

EnergyStats recording_energy_stats(const AudioClip& recording, const MelConfig& cfg) {
  const auto min_len = static_cast<std::size_t>(std::llround(kChunkSeconds * recording.sample_rate));
  const AudioClip& source = recording.samples.size() >= min_len ? recording : tile_to(recording, min_len);
  const auto peaks = frame_peak_energies(mel_spectrogram(source, cfg));
  EnergyStats stats;
  stats.median = median_of(peaks);
  std::vector<double> dev(peaks.size());
  std::transform(peaks.begin(), peaks.end(), dev.begin(), [&](double e) { return std::abs(e - stats.median); });
  stats.mad = median_of(std::move(dev));
  return stats;
}

DetectorDecision energy_detector(const Chunk& c, const EnergyStats& stats, const MelConfig& cfg, double k) {
  DetectorDecision d;
  d.chunk_id = c.id();
  if (stats.mad <= 0.0) {
    d.score = 1.0;
    d.keep = true;
    return d;
  }
  const auto peaks = frame_peak_energies(mel_spectrogram(c.samples, cfg));
  const double loudest = *std::max_element(peaks.begin(), peaks.end());
  const double threshold = stats.median + k * stats.mad;
  d.keep = loudest >= threshold;
  d.score = 1.0 / (1.0 + std::exp(-(loudest - threshold) / stats.mad));
  // The logistic can round to 0.5 on either side of the threshold; the rule is the contract.
  if (d.keep && d.score < 0.5) d.score = 0.5;
  if (!d.keep && d.score >= 0.5) d.score = std::nextafter(0.5, 0.0);
  return d;
}

std::vector<Chunk> external_detector_filter(const std::vector<Chunk>& chunks, std::span<const double> scores,
                                            double threshold) {
  if (chunks.size() != scores.size()) {
    throw ShapeError("external_detector_filter: " + std::to_string(chunks.size()) + " chunks but " +
                     std::to_string(scores.size()) + " scores");
  }
  std::vector<Chunk> kept;
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (scores[i] >= threshold) kept.push_back(chunks[i]);
  }
  return kept;
}

std::map<std::string, double> load_detector_scores(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open detector score file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty score file");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) header.push_back(col);
  }
  const auto id_col = std::find(header.begin(), header.end(), "chunk_id") - header.begin();
  const auto score_col = std::find(header.begin(), header.end(), "score") - header.begin();
  if (id_col == static_cast<std::ptrdiff_t>(header.size()) ||
      score_col == static_cast<std::ptrdiff_t>(header.size())) {
    throw ConfigError(path.string() + ": header must contain chunk_id and score");
  }
  std::map<std::string, double> scores;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != header.size()) {
      throw ConfigError(path.string() + ": row " + std::to_string(row) + " has wrong field count");
    }
    double s = 0.0;
    try {
      s = std::stod(fields[static_cast<std::size_t>(score_col)]);
    } catch (const std::exception&) {
      throw ConfigError(path.string() + ": row " + std::to_string(row) + " has a non-numeric score");
    }
    if (!(s >= 0.0 && s <= 1.0)) throw ConfigError(path.string() + ": row " + std::to_string(row) + " score outside [0,1]");
    scores[fields[static_cast<std::size_t>(id_col)]] = s;
  }
  return scores;
}

void save_detector_decisions(const std::filesystem::path& path, const std::vector<Chunk>& chunks,
                             const std::vector<DetectorDecision>& decisions) {
  if (chunks.size() != decisions.size()) throw ShapeError("save_detector_decisions: size mismatch");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "chunk_id,start_time,score,keep\n";
  char buf[64];
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6f,%.9g", chunks[i].start_time, decisions[i].score);
    out << decisions[i].chunk_id << "," << buf << "," << (decisions[i].keep ? 1 : 0) << "\n";
  }
}

}  // namespace birdtl
