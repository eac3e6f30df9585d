#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "birdtl/manifest.hpp"
#include "birdtl/network.hpp"

namespace birdtl {

// Recordings x classes, values in [0,1].
struct ScoreMatrix {
  std::vector<std::string> row_ids;
  std::vector<std::string> class_names;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  ScoreMatrix() = default;
  ScoreMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::vector<double> column(std::size_t c) const;
};

// 0/1 truth matrix with the same shape as a ScoreMatrix.
using TruthMatrix = ScoreMatrix;

// Per-class maximum over chunks.
std::vector<double> pool_recording(const Logits& chunk_scores);

// argmax per row (ties -> lowest index) compared to the primary label.
double f1_single_label(const ScoreMatrix& scores, std::span<const ClassId> truth);
double f1_single_label_macro(const ScoreMatrix& scores, std::span<const ClassId> truth);

// Mean precision@k over positive ranks; nullopt without positives.
std::optional<double> average_precision(std::span<const double> scores, std::span<const int> truth);
// Mann-Whitney statistic with half credit for ties; nullopt for single-class truth.
std::optional<double> auroc(std::span<const double> scores, std::span<const int> truth);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};
// Micro precision/recall of {score >= threshold}; zero when a denominator is zero.
PrecisionRecall precision_recall_at(const ScoreMatrix& scores, const TruthMatrix& truth, double threshold = 0.2);

struct ClassMetrics {
  std::size_t class_id = 0;
  std::string name;
  std::size_t positives = 0;
  double ap = 0.0;
  std::optional<double> auroc;
};

// Classes with at least one positive, in vocabulary order.
std::vector<ClassMetrics> per_class_metrics(const ScoreMatrix& scores, const TruthMatrix& truth);
double mean_average_precision(const std::vector<ClassMetrics>& per_class);
double macro_auroc(const std::vector<ClassMetrics>& per_class);

struct RegimeCutoffs {
  std::size_t low_max = 25;     // count <= low_max -> low
  std::size_t medium_max = 100; // count <= medium_max -> medium, else high
};

struct RegimeSummary {
  std::string regime;
  std::vector<std::string> classes;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

std::string regime_of(std::size_t train_count, const RegimeCutoffs& cutoffs);
// Only non-empty regimes are returned, ordered low, medium, high.
std::vector<RegimeSummary> regime_breakdown(const std::vector<ClassMetrics>& per_class,
                                            std::span<const std::size_t> train_counts,
                                            const RegimeCutoffs& cutoffs = {});

struct ForegroundBackground {
  ClassId species = 0;
  std::string name;
  std::size_t n_foreground = 0;
  std::size_t n_background = 0;
  std::optional<double> foreground_recall;
  std::optional<double> background_recall;
};

// Restricted to recordings with exactly one primary and one secondary label.
std::vector<ForegroundBackground> foreground_background_recall(const ScoreMatrix& scores,
                                                               std::span<const Recording> recordings,
                                                               const LabelVocabulary& vocab, double threshold = 0.2);

TruthMatrix truth_matrix(std::span<const Recording> recordings, std::size_t n_classes, bool include_secondary);

void save_score_matrix(const std::filesystem::path& path, const ScoreMatrix& scores);
ScoreMatrix load_score_matrix(const std::filesystem::path& path);

}  // namespace birdtl
