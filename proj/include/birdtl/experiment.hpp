#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include <json.hpp>

#include "birdtl/dataset.hpp"
#include "birdtl/report.hpp"
#include "birdtl/trainer.hpp"

namespace birdtl {

struct ExperimentConfig {
  std::string name;

  struct Data {
    std::filesystem::path vocab;
    std::filesystem::path train_manifest;
    std::filesystem::path val_manifest;
    std::filesystem::path test_manifest;   // optional
    std::filesystem::path noise_manifest;  // optional
    bool use_secondary_labels = false;
    std::string mel_preset = "passt";
    double chunk_stride = kChunkSeconds;
    DetectorSettings detector;
  } data;

  struct Model {
    std::string arch = "teacher";
    std::filesystem::path init_checkpoint;  // backbone source, optional
    std::uint64_t init_seed = 0;
    std::vector<int> widths;  // empty: architecture defaults
  } model;

  TrainConfig train;
  std::filesystem::path teacher_checkpoint;

  struct Eval {
    double threshold = 0.2;
    RegimeCutoffs cutoffs;
    bool macro_f1 = false;
    bool foreground_background = true;
  } eval;

  // Fully resolved document: absolute paths, every default spelled out.
  nlohmann::json to_json() const;
};

// Schema-checked; relative paths resolve against `base_dir`.
ExperimentConfig parse_experiment(const nlohmann::json& doc, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment(const std::filesystem::path& path);
std::string experiment_checksum(const ExperimentConfig& cfg);

struct TrainRun {
  TrainResult result;
  std::filesystem::path checkpoint;
  std::filesystem::path history;
};

// Writes config.json (snapshot), checkpoint.bin and history.csv into out_dir.
TrainRun run_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, std::ostream* log = nullptr);

struct EvalRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path manifest;
  std::filesystem::path vocab;           // optional; must match the checkpoint classes
  std::optional<Split> split;            // keep only rows of this split
  std::optional<LabelMode> mode;         // default: the checkpoint's training mode
  std::filesystem::path train_manifest;  // optional; enables the regime table
  ReportOptions options;
};

// Writes scores.csv, report.json and report.txt into out_dir.
MetricsReport run_eval(const EvalRequest& req, const std::filesystem::path& out_dir);

// Runs (or resumes) every experiment; writes <out>/<name>/... and summary.csv.
// Returns 0 when every experiment succeeded, 1 otherwise.
int run_grid(const std::filesystem::path& grid_path, const std::filesystem::path& out_dir,
             std::ostream* log = nullptr);

struct DetectRequest {
  std::filesystem::path manifest;
  std::filesystem::path vocab;
  DetectorSettings detector;
  std::string mel_preset = "passt";
};

void run_detect(const DetectRequest& req, const std::filesystem::path& out_csv);

}  // namespace birdtl
