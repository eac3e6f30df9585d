#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "birdtl/audio.hpp"
#include "birdtl/mel.hpp"

namespace birdtl {

inline constexpr double kChunkSeconds = 3.0;

struct Chunk {
  std::string parent;  // recording id (manifest clip_ref)
  std::size_t index = 0;
  double start_time = 0.0;
  AudioClip samples;  // exactly 3 s at the parent's rate

  std::string id() const { return parent + "#" + std::to_string(index); }
};

// Non-overlapping 3 s windows at `stride`; a short tail becomes one final
// chunk ending at the clip end, and clips under 3 s are tiled to 3 s.
std::vector<Chunk> chunk(const AudioClip& clip, double stride = kChunkSeconds, const std::string& parent = {});

struct DetectorDecision {
  std::string chunk_id;
  double score = 0.0;
  bool keep = false;
};

// Per-recording frame statistics for the energy rule. Frame energy is the
// peak log-mel value over bands centred in [500 Hz, 10 kHz].
struct EnergyStats {
  double median = 0.0;
  double mad = 0.0;
};

std::vector<double> frame_peak_energies(const MelSpectrogram& spec);
EnergyStats recording_energy_stats(const AudioClip& recording, const MelConfig& cfg);

// keep iff max_t e_t >= median + k * MAD; score = logistic((max - threshold) / MAD).
// MAD == 0 always keeps (score 1).
DetectorDecision energy_detector(const Chunk& c, const EnergyStats& stats, const MelConfig& cfg, double k = 3.0);

// Retains chunks whose score >= threshold, in order.
std::vector<Chunk> external_detector_filter(const std::vector<Chunk>& chunks, std::span<const double> scores,
                                            double threshold = 0.3);

// chunk_id,score CSV (extra columns ignored). Keys are chunk ids.
std::map<std::string, double> load_detector_scores(const std::filesystem::path& path);
void save_detector_decisions(const std::filesystem::path& path, const std::vector<Chunk>& chunks,
                             const std::vector<DetectorDecision>& decisions);

}  // namespace birdtl
