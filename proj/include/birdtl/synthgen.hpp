#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "birdtl/audio.hpp"
#include "birdtl/manifest.hpp"

namespace birdtl {

struct Note {
  double duration = 0.1;  // seconds
  double f_start = 1.0;   // multipliers of the species base frequency
  double f_end = 1.0;
  double amplitude = 1.0;
  double gap_after = 0.03;
};

struct SpeciesModel {
  std::string name;
  double base_freq = 1000.0;
  std::vector<Note> call;
  double call_rate = 1.0;  // calls per second

  double min_freq() const;
  double max_freq() const;
  double call_duration() const;
  nlohmann::json to_json() const;
};

// Geometric base-frequency grid with jitter; neighbours stay >= 15% apart and
// every call stays inside [500 Hz, 8 kHz]. Throws ConfigError when n does not fit.
std::vector<SpeciesModel> make_species(int n, std::uint64_t seed);

struct SceneSpec {
  double duration = 6.0;
  int sample_rate = 16000;
  std::size_t foreground = 0;  // index into the species list
  std::vector<std::pair<std::size_t, double>> background;  // (species, gain)
  double noise_level = 0.0;  // RMS of the pink-noise floor
  std::uint64_t seed = 0;
};

// Unit-gain rendering of one species' calls for a scene (stream keyed by the
// scene seed and the species index).
std::vector<float> render_species_track(const SceneSpec& spec, const SpeciesModel& species, std::size_t index);
std::vector<float> pink_noise(std::size_t n, double rms_level, std::uint64_t seed);

struct Scene {
  AudioClip clip;
  Recording rec;
};

Scene render_scene(const SceneSpec& spec, const std::vector<SpeciesModel>& species, const LabelVocabulary& vocab);

struct CorpusConfig {
  int n_classes = 8;
  int per_class = 20;
  double bg_rate = 0.3;
  double train_ratio = 0.7;
  double val_ratio = 0.1;
  double test_ratio = 0.2;
  double incomplete_fraction = 0.5;
  double duration = 6.0;
  int sample_rate = 16000;
  double noise_level = 0.003;
  double bg_gain_min = 0.05;
  double bg_gain_max = 0.3;
  int n_noise_files = 8;
  double noise_duration = 6.0;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
};

struct CorpusPaths {
  std::filesystem::path dir;
  std::filesystem::path classes;
  std::filesystem::path noise_list;
  std::filesystem::path manifest(Split split, bool incomplete = false) const;
};

struct CorpusSummary {
  CorpusPaths paths;
  std::vector<Recording> complete;
  std::vector<Recording> incomplete;
  std::size_t secondary_entries = 0;
  std::size_t deleted_entries = 0;
};

// Layout: audio/*.wav, noise/*.wav, noise.csv, classes.txt, species.json,
// {train,val,test}.csv (full truth) and {train,val,test}_incomplete.csv.
CorpusSummary make_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace birdtl
