#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "birdtl/losses.hpp"
#include "birdtl/metrics.hpp"

namespace birdtl {

struct ReportOptions {
  LabelMode mode = LabelMode::kSingleLabel;
  double threshold = 0.2;
  RegimeCutoffs cutoffs;
  bool macro_f1 = false;
  bool foreground_background = true;
  // Per-class training recording counts (primary labels); regimes are skipped when absent.
  std::optional<std::vector<std::size_t>> train_counts;
};

struct MetricsReport {
  LabelMode mode = LabelMode::kSingleLabel;
  std::size_t n_recordings = 0;
  std::size_t n_classes = 0;
  double threshold = 0.2;
  double f1 = 0.0;
  bool macro_f1 = false;
  double map = 0.0;
  double auroc = 0.0;
  PrecisionRecall pr;
  std::vector<ClassMetrics> per_class;
  std::vector<RegimeSummary> regimes;
  std::vector<ForegroundBackground> fg_bg;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

// Truth comes from `recordings` (rows aligned with `scores`): primary only for
// single_label, primary plus secondaries for multi_label.
MetricsReport build_report(const ScoreMatrix& scores, std::span<const Recording> recordings,
                           const LabelVocabulary& vocab, const ReportOptions& options);

std::vector<std::size_t> primary_counts(std::span<const Recording> recordings, std::size_t n_classes);

void write_report(const std::filesystem::path& dir, const MetricsReport& report);

}  // namespace birdtl
