#include "birdtl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "birdtl/error.hpp"

namespace birdtl {
namespace {

std::size_t argmax_row(const ScoreMatrix& s, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < s.cols; ++c) {
    if (s(r, c) > s(r, best)) best = c;
  }
  return best;
}

double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

std::vector<double> ScoreMatrix::column(std::size_t c) const {
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = (*this)(r, c);
  return out;
}

std::vector<double> pool_recording(const Logits& chunk_scores) {
  if (chunk_scores.rows == 0) throw ShapeError("pool_recording: no chunks");
  std::vector<double> out(chunk_scores.row(0).begin(), chunk_scores.row(0).end());
  for (std::size_t r = 1; r < chunk_scores.rows; ++r) {
    for (std::size_t c = 0; c < chunk_scores.cols; ++c) out[c] = std::max(out[c], chunk_scores(r, c));
  }
  return out;
}

double f1_single_label(const ScoreMatrix& scores, std::span<const ClassId> truth) {
  if (truth.size() != scores.rows) throw ShapeError("f1: truth length differs from score rows");
  if (scores.rows == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t r = 0; r < scores.rows; ++r) {
    if (static_cast<ClassId>(argmax_row(scores, r)) == truth[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(scores.rows);
}

double f1_single_label_macro(const ScoreMatrix& scores, std::span<const ClassId> truth) {
  if (truth.size() != scores.rows) throw ShapeError("f1: truth length differs from score rows");
  std::vector<std::size_t> tp(scores.cols, 0), fp(scores.cols, 0), fn(scores.cols, 0);
  for (std::size_t r = 0; r < scores.rows; ++r) {
    const std::size_t pred = argmax_row(scores, r);
    const auto t = static_cast<std::size_t>(truth[r]);
    if (pred == t) {
      ++tp[t];
    } else {
      ++fp[pred];
      ++fn[t];
    }
  }
  double acc = 0.0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < scores.cols; ++c) {
    if (tp[c] + fn[c] == 0) continue;  // class absent from truth
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    acc += denom > 0 ? 2.0 * tp[c] / denom : 0.0;
    ++n;
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

std::optional<double> average_precision(std::span<const double> scores, std::span<const int> truth) {
  if (scores.size() != truth.size()) throw ShapeError("average_precision: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::size_t hits = 0;
  double acc = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (truth[order[k]]) {
      ++hits;
      acc += static_cast<double>(hits) / static_cast<double>(k + 1);
    }
  }
  if (hits == 0) return std::nullopt;
  return acc / static_cast<double>(hits);
}

std::optional<double> auroc(std::span<const double> scores, std::span<const int> truth) {
  if (scores.size() != truth.size()) throw ShapeError("auroc: length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Mid-ranks over tie groups; doubled to stay in integers.
  std::size_t n_pos = 0;
  std::uint64_t rank2_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t mid2 = static_cast<std::uint64_t>(i + 1 + j);  // 2 * average of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (truth[order[k]]) {
        ++n_pos;
        rank2_pos += mid2;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double u2 = static_cast<double>(rank2_pos) - static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u2 / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

PrecisionRecall precision_recall_at(const ScoreMatrix& scores, const TruthMatrix& truth, double threshold) {
  if (scores.rows != truth.rows || scores.cols != truth.cols) throw ShapeError("precision_recall: shape mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.values.size(); ++i) {
    const bool pred = scores.values[i] >= threshold;
    const bool pos = truth.values[i] > 0.5;
    if (pred && pos) ++tp;
    else if (pred) ++fp;
    else if (pos) ++fn;
  }
  PrecisionRecall pr;
  pr.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  pr.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  return pr;
}

std::vector<ClassMetrics> per_class_metrics(const ScoreMatrix& scores, const TruthMatrix& truth) {
  if (scores.rows != truth.rows || scores.cols != truth.cols) throw ShapeError("per_class_metrics: shape mismatch");
  std::vector<ClassMetrics> out;
  for (std::size_t c = 0; c < scores.cols; ++c) {
    const auto col = scores.column(c);
    std::vector<int> t(truth.rows);
    for (std::size_t r = 0; r < truth.rows; ++r) t[r] = truth(r, c) > 0.5 ? 1 : 0;
    const auto ap = average_precision(col, t);
    if (!ap) continue;
    ClassMetrics m;
    m.class_id = c;
    m.name = c < scores.class_names.size() ? scores.class_names[c] : std::to_string(c);
    m.positives = static_cast<std::size_t>(std::count(t.begin(), t.end(), 1));
    m.ap = *ap;
    m.auroc = auroc(col, t);
    out.push_back(std::move(m));
  }
  return out;
}

double mean_average_precision(const std::vector<ClassMetrics>& per_class) {
  if (per_class.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& m : per_class) acc += m.ap;
  return acc / static_cast<double>(per_class.size());
}

double macro_auroc(const std::vector<ClassMetrics>& per_class) {
  double acc = 0.0;
  std::size_t n = 0;
  for (const auto& m : per_class) {
    if (m.auroc) {
      acc += *m.auroc;
      ++n;
    }
  }
  return n ? acc / static_cast<double>(n) : 0.0;
}

std::string regime_of(std::size_t train_count, const RegimeCutoffs& cutoffs) {
  if (train_count <= cutoffs.low_max) return "low";
  if (train_count <= cutoffs.medium_max) return "medium";
  return "high";
}

std::vector<RegimeSummary> regime_breakdown(const std::vector<ClassMetrics>& per_class,
                                            std::span<const std::size_t> train_counts,
                                            const RegimeCutoffs& cutoffs) {
  std::vector<RegimeSummary> out;
  for (const char* name : {"low", "medium", "high"}) {
    RegimeSummary s;
    s.regime = name;
    std::vector<double> aps;
    for (const auto& m : per_class) {
      if (m.class_id >= train_counts.size()) throw ShapeError("regime_breakdown: missing train count");
      if (regime_of(train_counts[m.class_id], cutoffs) == name) {
        aps.push_back(m.ap);
        s.classes.push_back(m.name);
      }
    }
    if (aps.empty()) continue;
    std::sort(aps.begin(), aps.end());
    s.min = aps.front();
    s.q1 = quantile(aps, 0.25);
    s.median = quantile(aps, 0.5);
    s.q3 = quantile(aps, 0.75);
    s.max = aps.back();
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ForegroundBackground> foreground_background_recall(const ScoreMatrix& scores,
                                                               std::span<const Recording> recordings,
                                                               const LabelVocabulary& vocab, double threshold) {
  if (recordings.size() != scores.rows) throw ShapeError("foreground_background: rows differ from recordings");
  const std::size_t n = vocab.size();
  std::vector<std::size_t> fg_n(n, 0), fg_hit(n, 0), bg_n(n, 0), bg_hit(n, 0);
  for (std::size_t r = 0; r < recordings.size(); ++r) {
    const auto& rec = recordings[r];
    if (rec.secondary_labels.size() != 1) continue;
    const auto fg = static_cast<std::size_t>(rec.primary_label);
    const auto bg = static_cast<std::size_t>(rec.secondary_labels.front());
    ++fg_n[fg];
    if (scores(r, fg) >= threshold) ++fg_hit[fg];
    ++bg_n[bg];
    if (scores(r, bg) >= threshold) ++bg_hit[bg];
  }
  std::vector<ForegroundBackground> out;
  for (std::size_t c = 0; c < n; ++c) {
    if (fg_n[c] == 0 && bg_n[c] == 0) continue;
    ForegroundBackground fb;
    fb.species = static_cast<ClassId>(c);
    fb.name = vocab.name(static_cast<ClassId>(c));
    fb.n_foreground = fg_n[c];
    fb.n_background = bg_n[c];
    if (fg_n[c]) fb.foreground_recall = static_cast<double>(fg_hit[c]) / static_cast<double>(fg_n[c]);
    if (bg_n[c]) fb.background_recall = static_cast<double>(bg_hit[c]) / static_cast<double>(bg_n[c]);
    out.push_back(fb);
  }
  return out;
}

TruthMatrix truth_matrix(std::span<const Recording> recordings, std::size_t n_classes, bool include_secondary) {
  TruthMatrix t(recordings.size(), n_classes);
  for (std::size_t r = 0; r < recordings.size(); ++r) {
    t(r, static_cast<std::size_t>(recordings[r].primary_label)) = 1.0;
    if (include_secondary) {
      for (ClassId s : recordings[r].secondary_labels) t(r, static_cast<std::size_t>(s)) = 1.0;
    }
  }
  return t;
}

void save_score_matrix(const std::filesystem::path& path, const ScoreMatrix& scores) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "recording";
  for (const auto& n : scores.class_names) out << "," << n;
  out << "\n";
  char buf[32];
  for (std::size_t r = 0; r < scores.rows; ++r) {
    out << (r < scores.row_ids.size() ? scores.row_ids[r] : std::to_string(r));
    for (std::size_t c = 0; c < scores.cols; ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", scores(r, c));
      out << "," << buf;
    }
    out << "\n";
  }
}

ScoreMatrix load_score_matrix(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  const auto split = [](const std::string& line) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string x;
    while (std::getline(ss, x, ',')) f.push_back(x);
    return f;
  };
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path.string() + ": empty score matrix");
  auto header = split(line);
  ScoreMatrix s;
  s.class_names.assign(header.begin() + 1, header.end());
  s.cols = s.class_names.size();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split(line);
    if (f.size() != s.cols + 1) throw ConfigError(path.string() + ": ragged row");
    s.row_ids.push_back(f[0]);
    for (std::size_t c = 0; c < s.cols; ++c) s.values.push_back(std::stod(f[c + 1]));
    ++s.rows;
  }
  return s;
}

}  // namespace birdtl
