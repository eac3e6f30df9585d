#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "birdtl/augment.hpp"
#include "birdtl/losses.hpp"
#include "birdtl/manifest.hpp"
#include "birdtl/mel.hpp"
#include "birdtl/metrics.hpp"
#include "birdtl/segmenter.hpp"

namespace birdtl {

// Recording decoded, resampled to the model rate and cut into 3 s chunks.
struct LoadedRecording {
  Recording rec;
  std::vector<Chunk> chunks;
  std::optional<EnergyStats> energy;
};

std::vector<LoadedRecording> load_recordings(const Manifest& manifest, std::span<const Recording> recordings,
                                             const MelConfig& cfg, double stride = kChunkSeconds,
                                             bool with_energy_stats = false);

std::vector<AudioClip> load_noise_bank(const std::filesystem::path& list, int sample_rate);

// single_label: one-hot primary; multi_label: primary plus secondaries when
// use_secondary is set.
LabelVector make_targets(const Recording& rec, std::size_t n_classes, LabelMode mode, bool use_secondary);

enum class DetectorKind { kNone, kEnergy, kExternal };
std::string_view to_string(DetectorKind kind);
DetectorKind parse_detector_kind(std::string_view text);

struct DetectorSettings {
  DetectorKind kind = DetectorKind::kNone;
  double k = 3.0;
  std::filesystem::path score_file;
  double threshold = 0.3;
};

struct TrainChunk {
  std::size_t recording = 0;
  std::size_t chunk_index = 0;
  std::vector<float> samples;
  LabelVector target;
  std::uint64_t key = 0;
};

struct TrainingSet {
  std::vector<TrainChunk> chunks;
  int sample_rate = 0;
  std::size_t n_classes = 0;
  std::size_t filtered_out = 0;  // chunks removed by the detector
};

// Weak labels: every chunk inherits its recording's targets. When a detector
// discards all chunks of a recording, its best-scoring chunk is kept.
TrainingSet build_training_set(const std::vector<LoadedRecording>& recordings, std::size_t n_classes,
                               LabelMode mode, bool use_secondary, const MelConfig& cfg,
                               const DetectorSettings& detector);

struct EvalSet {
  std::vector<Recording> recordings;
  std::vector<std::vector<std::vector<float>>> inputs;  // [recording][chunk] mel values
};

EvalSet build_eval_set(const std::vector<LoadedRecording>& recordings, const MelConfig& cfg);

// chunk -> activation -> per-recording max pooling.
ScoreMatrix score_eval_set(const Network& net, const EvalSet& set, const LabelVocabulary& vocab);

}  // namespace birdtl
