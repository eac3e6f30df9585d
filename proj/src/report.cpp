#include "birdtl/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "birdtl/error.hpp"

namespace birdtl {
namespace {

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "-"; }

}  // namespace

std::vector<std::size_t> primary_counts(std::span<const Recording> recordings, std::size_t n_classes) {
  std::vector<std::size_t> counts(n_classes, 0);
  for (const auto& r : recordings) ++counts.at(static_cast<std::size_t>(r.primary_label));
  return counts;
}

MetricsReport build_report(const ScoreMatrix& scores, std::span<const Recording> recordings,
                           const LabelVocabulary& vocab, const ReportOptions& options) {
  if (scores.rows != recordings.size()) throw ShapeError("score rows do not match the recording count");
  if (scores.cols != vocab.size()) throw ShapeError("score columns do not match the vocabulary");
  MetricsReport rep;
  rep.mode = options.mode;
  rep.n_recordings = recordings.size();
  rep.n_classes = vocab.size();
  rep.threshold = options.threshold;
  rep.macro_f1 = options.macro_f1;

  std::vector<ClassId> primary;
  for (const auto& r : recordings) primary.push_back(r.primary_label);
  rep.f1 = recordings.empty() ? 0.0
                              : (options.macro_f1 ? f1_single_label_macro(scores, primary)
                                                  : f1_single_label(scores, primary));
  ScoreMatrix truth = truth_matrix(recordings, vocab.size(), options.mode == LabelMode::kMultiLabel);
  truth.class_names = vocab.names();
  rep.per_class = per_class_metrics(scores, truth);
  for (auto& c : rep.per_class) c.name = vocab.name(static_cast<ClassId>(c.class_id));
  rep.map = mean_average_precision(rep.per_class);
  rep.auroc = macro_auroc(rep.per_class);
  rep.pr = precision_recall_at(scores, truth, options.threshold);
  if (options.train_counts) rep.regimes = regime_breakdown(rep.per_class, *options.train_counts, options.cutoffs);
  if (options.foreground_background) {
    rep.fg_bg = foreground_background_recall(scores, recordings, vocab, options.threshold);
  }
  return rep;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["mode"] = std::string(to_string(mode));
  j["n_recordings"] = n_recordings;
  j["n_classes"] = n_classes;
  j["threshold"] = threshold;
  j["f1"] = f1;
  j["f1_average"] = macro_f1 ? "macro" : "micro";
  j["map"] = map;
  j["auroc"] = auroc;
  j["precision"] = pr.precision;
  j["recall"] = pr.recall;
  j["per_class"] = nlohmann::json::array();
  for (const auto& c : per_class) {
    j["per_class"].push_back({{"class", c.name}, {"positives", c.positives}, {"ap", c.ap}, {"auroc", opt(c.auroc)}});
  }
  j["regimes"] = nlohmann::json::array();
  for (const auto& r : regimes) {
    j["regimes"].push_back({{"regime", r.regime}, {"classes", r.classes}, {"min", r.min}, {"q1", r.q1},
                            {"median", r.median}, {"q3", r.q3}, {"max", r.max}});
  }
  j["foreground_background"] = nlohmann::json::array();
  for (const auto& f : fg_bg) {
    j["foreground_background"].push_back({{"class", f.name},
                                          {"n_foreground", f.n_foreground},
                                          {"n_background", f.n_background},
                                          {"foreground_recall", opt(f.foreground_recall)},
                                          {"background_recall", opt(f.background_recall)}});
  }
  return j;
}

std::string MetricsReport::to_text() const {
  std::ostringstream out;
  char line[160];
  out << "mode        " << to_string(mode) << "\n";
  out << "recordings  " << n_recordings << "\n";
  out << "f1 (" << (macro_f1 ? "macro" : "micro") << ")  " << fmt(f1) << "\n";
  out << "mAP         " << fmt(map) << "\n";
  out << "AUROC       " << fmt(auroc) << "\n";
  out << "precision   " << fmt(pr.precision) << "  @ " << fmt(threshold) << "\n";
  out << "recall      " << fmt(pr.recall) << "  @ " << fmt(threshold) << "\n\n";
  std::snprintf(line, sizeof line, "%-16s %9s %8s %8s\n", "class", "positives", "AP", "AUROC");
  out << line;
  for (const auto& c : per_class) {
    std::snprintf(line, sizeof line, "%-16s %9zu %8s %8s\n", c.name.c_str(), c.positives, fmt(c.ap).c_str(),
                  fmt(c.auroc).c_str());
    out << line;
  }
  if (!regimes.empty()) {
    out << "\n";
    std::snprintf(line, sizeof line, "%-8s %7s %8s %8s %8s %8s %8s\n", "regime", "classes", "min", "q1", "median",
                  "q3", "max");
    out << line;
    for (const auto& r : regimes) {
      std::snprintf(line, sizeof line, "%-8s %7zu %8s %8s %8s %8s %8s\n", r.regime.c_str(), r.classes.size(),
                    fmt(r.min).c_str(), fmt(r.q1).c_str(), fmt(r.median).c_str(), fmt(r.q3).c_str(),
                    fmt(r.max).c_str());
      out << line;
    }
  }
  if (!fg_bg.empty()) {
    out << "\n";
    std::snprintf(line, sizeof line, "%-16s %6s %8s %6s %8s\n", "species", "n_fg", "fg_rec", "n_bg", "bg_rec");
    out << line;
    for (const auto& f : fg_bg) {
      std::snprintf(line, sizeof line, "%-16s %6zu %8s %6zu %8s\n", f.name.c_str(), f.n_foreground,
                    fmt(f.foreground_recall).c_str(), f.n_background, fmt(f.background_recall).c_str());
      out << line;
    }
  }
  return out.str();
}

void write_report(const std::filesystem::path& dir, const MetricsReport& report) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "report.json", std::ios::trunc) << report.to_json().dump(2) << "\n";
  std::ofstream(dir / "report.txt", std::ios::trunc) << report.to_text();
}

}  // namespace birdtl
