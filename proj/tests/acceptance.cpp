// Acceptance suite: one PASS/FAIL line per criterion. Tolerances are pinned here.
//   acceptance [work_dir]
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "birdtl/error.hpp"
#include "birdtl/experiment.hpp"
#include "birdtl/losses.hpp"
#include "birdtl/mel.hpp"
#include "birdtl/metrics.hpp"
#include "birdtl/network.hpp"
#include "birdtl/rng.hpp"
#include "birdtl/synthgen.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace birdtl;
using nlohmann::json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// pinned tolerances
constexpr double kMelSecondsPerClip = 1.0;
constexpr double kGradRel = 1e-4;
constexpr double kGradSuiteSeconds = 120.0;
constexpr double kAurocOracleTol = 1e-12;
constexpr double kCollapseRel = 4 * std::numeric_limits<double>::epsilon();
constexpr double kZeroKd = 1e-9;
constexpr double kDeepF1 = 0.9;
constexpr int kDeepEpochs = 30;
constexpr double kDeepSeconds = 600.0;
constexpr double kDistillAurocGap = 0.05;
constexpr double kSecondaryMapGap = 0.03;
constexpr int kSecondarySeeds = 5;
constexpr int kBackgroundSpecies = 7;
constexpr double kDetectorMapGap = 0.05;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path write_json(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << j.dump(2) << "\n";
  return p;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::function<Verdict()>& fn) {
  const auto t0 = Clock::now();
  Verdict v;
  try {
    v = fn();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  if (!v.pass) ++failures;
  std::cout << "criterion " << (id < 10 ? " " : "") << id << ": " << (v.pass ? "PASS" : "FAIL") << "  " << v.detail
            << fmt("  [%.1f s]", seconds_since(t0)) << std::endl;
}

// ---------------------------------------------------------------- shared runs

struct Workspace {
  fs::path root;
  CorpusSummary src, ref, inc;
  fs::path pretrain;   // teacher checkpoint trained on the source corpus
  fs::path grid;       // ref grid output: deep, shallow, distill
};

json data_block(const CorpusSummary& c, bool incomplete = false) {
  return {{"vocab", c.paths.classes.string()},
          {"train_manifest", c.paths.manifest(Split::kTrain, incomplete).string()},
          {"val_manifest", c.paths.manifest(Split::kVal, incomplete).string()},
          {"test_manifest", c.paths.manifest(Split::kTest).string()},
          {"noise_manifest", c.paths.noise_list.string()}};
}

json ref_experiment(const Workspace& w, const std::string& name, const std::string& strategy, std::uint64_t seed) {
  return {{"name", name},
          {"data", data_block(w.ref)},
          {"model", {{"arch", "teacher"}, {"init_checkpoint", w.pretrain.string()}, {"init_seed", seed}}},
          {"train", {{"strategy", strategy}, {"epochs", 20}, {"seed", seed}, {"lr", 0.01}}}};
}

void prepare(Workspace& w) {
  CorpusConfig src;
  src.n_classes = 12;
  src.seed = 101;
  w.src = make_corpus(src, w.root / "src");

  CorpusConfig ref;  // 8 classes x 20 recordings
  ref.seed = 7;
  w.ref = make_corpus(ref, w.root / "ref");

  CorpusConfig inc;
  inc.per_class = 100;
  inc.train_ratio = 0.3;
  inc.val_ratio = 0.1;
  inc.test_ratio = 0.6;
  inc.seed = 13;
  w.inc = make_corpus(inc, w.root / "inc");

  const json pre{{"name", "pretrain"},
                 {"data", data_block(w.src)},
                 {"model", {{"arch", "teacher"}, {"init_seed", 1}}},
                 {"train", {{"strategy", "deep_ft"}, {"epochs", 15}, {"seed", 1}, {"lr", 0.01}}}};
  const auto cfg = load_experiment(write_json(w.root / "configs" / "pretrain.json", pre));
  w.pretrain = run_train(cfg, w.root / "pretrain").checkpoint;

  w.grid = w.root / "grid";
  const auto cdir = w.root / "configs";
  write_json(cdir / "deep.json", ref_experiment(w, "deep", "deep_ft", 2));
  write_json(cdir / "shallow.json", ref_experiment(w, "shallow", "shallow_ft", 2));
  json distill{{"name", "distill"},
               {"data", data_block(w.ref)},
               {"model", {{"arch", "student_a"}, {"init_seed", 3}, {"widths", {8, 16, 32}}}},
               {"train",
                {{"strategy", "distill"},
                 {"epochs", 20},
                 {"seed", 3},
                 {"lr", 0.03},
                 {"distill", {{"teacher_checkpoint", (w.grid / "deep" / "checkpoint.bin").string()}}}}}};
  write_json(cdir / "distill.json", distill);
  write_json(cdir / "grid.json", {{"experiments", {"deep.json", "shallow.json", "distill.json"}}});
}

struct GridRow {
  std::string strategy;
  double map = 0, auroc = 0, per_epoch = 0, total = 0;
  int epochs = 0;
};

std::map<std::string, GridRow> read_summary(const fs::path& csv) {
  std::map<std::string, GridRow> rows;
  std::istringstream in(slurp(csv));
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (f.size() != 8 || f[7] != "ok") continue;
    rows[f[0]] = {f[1], std::stod(f[2]), std::stod(f[3]), std::stod(f[5]), std::stod(f[6]), std::stoi(f[4])};
  }
  return rows;
}

// ------------------------------------------------------------------ criteria

Verdict spectrogram_shapes() {
  bool ok = true;
  std::string detail;
  for (const char* name : {"passt", "psla"}) {
    const MelConfig cfg = preset(name);
    Rng rng = derive_rng(5, {static_cast<std::uint64_t>(cfg.sample_rate)});
    std::vector<float> x(static_cast<std::size_t>(3 * cfg.sample_rate));
    for (auto& v : x) v = static_cast<float>(uniform(rng, -0.5, 0.5));
    const auto t0 = Clock::now();
    const auto spec = mel_spectrogram(x, cfg);
    const double dt = seconds_since(t0);
    ok = ok && spec.n_mels == 128 && spec.n_frames == 298 && dt < kMelSecondsPerClip;
    detail += fmt("%s %zux%zu in %.3f s; ", name, spec.n_mels, spec.n_frames, dt);
  }
  return {ok, detail};
}

Verdict gradient_correctness() {
  const auto t0 = Clock::now();
  ArchitectureOptions o;
  o.input_height = 64;
  o.input_width = 64;
  bool ok = true;
  std::string detail;
  for (const char* arch : {"teacher", "student_a", "student_b"}) {
    for (auto mode : {LabelMode::kSingleLabel, LabelMode::kMultiLabel}) {
      const auto spec = architecture(arch, 4, activation_for(mode), o);
      const auto r = testing::gradient_check(spec, mode, 17, 1);
      ok = ok && r.checked == NetworkLayout(spec).param_count() && r.max_rel < kGradRel;
      detail += fmt("%s/%s %zu params max_rel %.1e; ", arch, std::string(to_string(mode)).c_str(), r.checked,
                    r.max_rel);
    }
  }
  const double dt = seconds_since(t0);
  return {ok && dt < kGradSuiteSeconds, detail + fmt("suite %.1f s", dt)};
}

Verdict metric_oracles() {
  Rng rng = derive_rng(2024, {3});
  double worst_auroc = 0.0;
  int ap_mismatch = 0, fixtures = 0;
  while (fixtures < 200) {
    const std::size_t n = 2 + uniform_index(rng, 99);
    const int levels = 1 + static_cast<int>(uniform_index(rng, 20));  // coarse levels force ties
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(uniform_index(rng, static_cast<std::size_t>(levels))) / levels;
      y[i] = uniform01(rng) < 0.3 ? 1 : 0;
    }
    const auto a = auroc(s, y);
    const auto p = average_precision(s, y);
    if (!a || !p) continue;
    ++fixtures;
    worst_auroc = std::max(worst_auroc, std::abs(*a - testing::auroc_pairs(s, y)));
    if (*p != testing::ap_ranks(s, y)) ++ap_mismatch;
  }
  const std::vector<double> hs{0.9, 0.8, 0.7};
  const std::vector<int> hy{1, 0, 1};
  const double hand = *average_precision(hs, hy);
  // 5/6 itself is not representable; allow one rounding of the final mean
  const bool ok = worst_auroc <= kAurocOracleTol && ap_mismatch == 0 && std::abs(hand - 5.0 / 6.0) <= 1e-15;
  return {ok, fmt("200 fixtures: max |auroc - oracle| %.1e, AP mismatches %d; hand case %.17g", worst_auroc,
                  ap_mismatch, hand)};
}

Verdict formula_collapses() {
  Rng rng = derive_rng(77, {4});
  double worst_one = 0.0, worst_zero = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 1 + uniform_index(rng, 8), C = 2 + uniform_index(rng, 10);
    Logits s(B, C), t(B, C);
    for (auto& v : s.values) v = uniform(rng, -8.0, 8.0);
    for (auto& v : t.values) v = uniform(rng, -8.0, 8.0);
    for (auto mode : {LabelMode::kSingleLabel, LabelMode::kMultiLabel}) {
      std::vector<LabelVector> y(B, LabelVector(C, 0.0));
      for (auto& row : y) {
        if (mode == LabelMode::kSingleLabel) {
          row[uniform_index(rng, C)] = 1.0;
        } else {
          for (auto& v : row) v = uniform01(rng) < 0.4 ? 1.0 : 0.0;
        }
      }
      const Logits scores = activate(s, activation_for(mode));
      const double lg = loss_ground_truth(scores, y, mode);
      const double l1 = loss_distill(s, t, y, {.lambda = 1.0, .tau = 2.5, .mode = mode});
      worst_one = std::max(worst_one, std::abs(l1 - lg) / std::max(1.0, std::abs(lg)));
      if (mode == LabelMode::kSingleLabel) {
        worst_zero = std::max(worst_zero, std::abs(loss_distill(s, s, y, {.lambda = 0.0, .tau = 1.0, .mode = mode})));
      }
    }
  }
  return {worst_one <= kCollapseRel && worst_zero < kZeroKd,
          fmt("lambda=1 max rel diff %.1e; lambda=0 self-distill max |loss| %.1e", worst_one, worst_zero)};
}

Verdict freezing(const Workspace& w, const std::string& teacher_before) {
  const auto pre = load_checkpoint(w.pretrain);
  const auto shallow = load_checkpoint(w.grid / "shallow" / "checkpoint.bin");
  const std::size_t nb = shallow.network.layout().backbone_param_count();
  const auto a = pre.network.params(), b = shallow.network.params();
  const bool backbone_same = nb == pre.network.layout().backbone_param_count() && std::equal(a.begin(), a.begin() + nb, b.begin());
  const bool head_moved = !std::equal(b.begin() + nb, b.end(), a.begin() + nb);
  const bool teacher_same = slurp(w.grid / "deep" / "checkpoint.bin") == teacher_before;
  return {backbone_same && head_moved && teacher_same,
          fmt("shallow backbone (%zu params) bit-identical: %s, head moved: %s; teacher checkpoint unchanged by distill: %s",
              nb, backbone_same ? "yes" : "no", head_moved ? "yes" : "no", teacher_same ? "yes" : "no")};
}

Verdict desk_pipeline(const Workspace& w, double deep_wall) {
  const json r = json::parse(slurp(w.grid / "deep" / "report.json"));
  const auto rows = read_summary(w.grid / "summary.csv");
  const auto& d = rows.at("deep");
  const double f1 = r["f1"].get<double>();
  return {f1 >= kDeepF1 && d.epochs <= kDeepEpochs && deep_wall < kDeepSeconds,
          fmt("deep FT from pretrained teacher backbone: test F1 %.4f after %d epochs, %.1f s wall", f1, d.epochs,
              deep_wall)};
}

Verdict strategies(const Workspace& w) {
  const auto rows = read_summary(w.grid / "summary.csv");
  const auto &deep = rows.at("deep"), &shallow = rows.at("shallow"), &distill = rows.at("distill");
  const bool faster = shallow.total < deep.total && shallow.total < distill.total;
  const double gap = std::abs(distill.auroc - deep.auroc);
  return {faster && gap <= kDistillAurocGap,
          fmt("train time shallow %.1f s, deep %.1f s, distill %.1f s; AUROC teacher %.4f, student %.4f", shallow.total,
              deep.total, distill.total, deep.auroc, distill.auroc)};
}

struct SecondaryRuns {
  std::vector<double> d_map, d_p, d_r;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> bg;  // species -> (with, without)
  std::size_t species = 0;
};

SecondaryRuns secondary_label_runs(const Workspace& w) {
  SecondaryRuns out;
  out.species = w.inc.complete.empty() ? 0 : LabelVocabulary::load(w.inc.paths.classes).size() - 1;
  for (int seed = 1; seed <= kSecondarySeeds; ++seed) {
    json rep[2];
    for (int sec = 0; sec < 2; ++sec) {
      const std::string name = fmt("sec%d_seed%d", sec, seed);
      json j{{"name", name},
             {"data", data_block(w.inc, true)},
             {"model", {{"arch", "teacher"}, {"init_checkpoint", w.pretrain.string()}, {"init_seed", seed}}},
             {"train",
              {{"strategy", "shallow_ft"},
               {"mode", "multi_label"},
               {"epochs", 20},
               {"seed", seed},
               {"augment", {{"mixup_prob", 0.0}, {"noise_prob", 0.0}}}}}};
      j["data"]["use_secondary_labels"] = sec == 1;
      const auto cfg = load_experiment(write_json(w.root / "configs" / (name + ".json"), j));
      const auto dir = w.root / "secondary" / name;
      const auto run = run_train(cfg, dir);
      EvalRequest req;
      req.checkpoint = run.checkpoint;
      req.manifest = w.inc.paths.manifest(Split::kTest);  // truth-complete
      req.split = Split::kTest;
      req.options.threshold = 0.2;
      rep[sec] = run_eval(req, dir / "eval").to_json();
    }
    out.d_map.push_back(rep[1]["map"].get<double>() - rep[0]["map"].get<double>());
    out.d_p.push_back(rep[1]["precision"].get<double>() - rep[0]["precision"].get<double>());
    out.d_r.push_back(rep[1]["recall"].get<double>() - rep[0]["recall"].get<double>());
    for (int sec = 0; sec < 2; ++sec) {
      for (const auto& f : rep[sec]["foreground_background"]) {
        if (f["background_recall"].is_null()) continue;
        auto& slot = out.bg[f["class"].get<std::string>()];
        (sec ? slot.first : slot.second).push_back(f["background_recall"].get<double>());
      }
    }
  }
  return out;
}

Verdict secondary_direction(const SecondaryRuns& s) {
  const double mr = median(s.d_r), mp = median(s.d_p);
  std::vector<double> abs_map;
  for (double d : s.d_map) abs_map.push_back(std::abs(d));
  const double mm = median(abs_map);
  std::string per;
  for (std::size_t i = 0; i < s.d_map.size(); ++i) {
    per += fmt("%s%+.3f/%+.3f/%+.3f", i ? " " : "", s.d_r[i], s.d_p[i], s.d_map[i]);
  }
  return {mr > 0 && mp < 0 && mm < kSecondaryMapGap,
          fmt("median over %zu seeds: d_recall %+.4f, d_precision %+.4f, |d_mAP| %.4f (per seed r/p/mAP: %s)",
              s.d_map.size(), mr, mp, mm, per.c_str())};
}

Verdict background_recall(const SecondaryRuns& s) {
  int improved = 0;
  std::string per;
  for (const auto& [name, v] : s.bg) {
    auto mean = [](const std::vector<double>& x) {
      double t = 0;
      for (double e : x) t += e;
      return x.empty() ? 0.0 : t / static_cast<double>(x.size());
    };
    const double with = mean(v.first), without = mean(v.second);
    if (with > without) ++improved;
    per += fmt(" %s %.2f>%.2f", name.c_str(), with, without);
  }
  return {improved >= kBackgroundSpecies,
          fmt("%d of %zu species improve (seed-mean background recall, with vs without):%s", improved, s.species,
              per.c_str())};
}

Verdict segment_selection(const Workspace& w) {
  json j = ref_experiment(w, "deep_energy", "deep_ft", 2);
  j["data"]["detector"] = {{"kind", "energy"}};
  const auto cfg = load_experiment(write_json(w.root / "configs" / "deep_energy.json", j));
  const auto dir = w.root / "detector" / "deep_energy";
  const auto run = run_train(cfg, dir);
  EvalRequest req;
  req.checkpoint = run.checkpoint;
  req.manifest = w.ref.paths.manifest(Split::kTest);
  req.split = Split::kTest;
  const double with = run_eval(req, dir / "eval").map;
  const double without = json::parse(slurp(w.grid / "deep" / "report.json"))["map"].get<double>();
  return {std::abs(with - without) < kDetectorMapGap,
          fmt("deep FT test mAP with energy filtering %.4f, without %.4f", with, without)};
}

// -------------------------------------------------------------- determinism

int sh(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(BIRDTL_EXE) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// history.csv keeps wall-clock seconds in its last column; everything else is compared raw.
std::string comparable(const fs::path& p) {
  std::string text = slurp(p);
  if (p.filename() != "history.csv") return text;
  std::istringstream in(text);
  std::string out;
  for (std::string line; std::getline(in, line);) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

// Files of `a` (restricted to `only` when given) must exist in `b` with equal content.
int diff_dirs(const fs::path& a, const fs::path& b, std::vector<std::string>& bad,
              const std::vector<std::string>& only = {}) {
  int n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    if (!only.empty() && std::find(only.begin(), only.end(), rel.string()) == only.end()) continue;
    ++n;
    if (!fs::exists(b / rel) || comparable(e.path()) != comparable(b / rel)) bad.push_back(rel.string());
  }
  return n;
}

Verdict determinism(const Workspace& w) {
  const fs::path d = w.root / "determinism", log = d / "cli.log";
  fs::create_directories(d);
  std::vector<std::string> bad;
  int files = 0, rc = 0;

  rc |= sh("synth --out " + (d / "s1").string() + " --n-classes 3 --per-class 4 --seed 5", log);
  rc |= sh("synth --config " + (d / "s1" / "synth_config.json").string() + " --out " + (d / "s2").string(), log);
  files += diff_dirs(d / "s1", d / "s2", bad);

  rc |= sh("train --config " + (w.grid / "shallow" / "config.json").string() + " --out " + (d / "t").string(), log);
  files += diff_dirs(w.grid / "shallow", d / "t", bad, {"config.json", "checkpoint.bin", "history.csv"});

  const std::string ck = (w.grid / "deep" / "checkpoint.bin").string();
  rc |= sh("eval --checkpoint " + ck + " --manifest " + w.ref.paths.manifest(Split::kTest).string() +
               " --train-manifest " + w.ref.paths.manifest(Split::kTrain).string() + " --out " + (d / "e1").string(),
           log);
  rc |= sh("eval --config " + (d / "e1" / "eval_config.json").string() + " --out " + (d / "e2").string(), log);
  files += diff_dirs(d / "e1", d / "e2", bad);

  rc |= sh("detect --manifest " + w.ref.paths.manifest(Split::kTest).string() + " --vocab " +
               w.ref.paths.classes.string() + " --out " + (d / "d1").string(),
           log);
  rc |= sh("detect --config " + (d / "d1" / "detect_config.json").string() + " --out " + (d / "d2").string(), log);
  files += diff_dirs(d / "d1", d / "d2", bad);

  std::string which;
  for (const auto& b : bad) which += " " + b;
  return {rc == 0 && bad.empty() && files > 0,
          fmt("synth/train/eval/detect re-run from snapshots: %d files compared, %zu differ%s%s", files, bad.size(),
              which.c_str(), rc ? " (a command failed, see cli.log)" : "")};
}

}  // namespace

int main(int argc, char** argv) {
  Workspace w;
  w.root = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "birdtl_acceptance";
  fs::remove_all(w.root);
  fs::create_directories(w.root);
  std::cout << "work dir " << w.root.string() << std::endl;

  report(1, spectrogram_shapes);
  report(2, gradient_correctness);
  report(3, metric_oracles);
  report(4, formula_collapses);

  const auto t0 = Clock::now();
  bool prepared = true;
  std::string prep_error;
  double deep_wall = 0.0;
  std::string teacher_before;
  try {
    prepare(w);
    std::cout << fmt("corpora and pretraining ready [%.1f s]", seconds_since(t0)) << std::endl;
    // deep first so its checkpoint can seed distillation; wall time of deep alone is captured separately
    const auto t_deep = Clock::now();
    write_json(w.root / "configs" / "grid_deep.json", {{"experiments", {"deep.json"}}});
    if (run_grid(w.root / "configs" / "grid_deep.json", w.grid) != 0) throw Error("deep run failed");
    deep_wall = seconds_since(t_deep);
    teacher_before = slurp(w.grid / "deep" / "checkpoint.bin");
    if (run_grid(w.root / "configs" / "grid.json", w.grid) != 0) throw Error("grid run failed");
  } catch (const std::exception& e) {
    prepared = false;
    prep_error = e.what();
  }
  auto needs_runs = [&](auto fn) {
    return [&, fn]() -> Verdict {
      if (!prepared) return {false, "shared runs failed: " + prep_error};
      return fn();
    };
  };

  report(5, needs_runs([&] { return freezing(w, teacher_before); }));
  report(6, needs_runs([&] { return desk_pipeline(w, deep_wall); }));
  report(7, needs_runs([&] { return strategies(w); }));

  SecondaryRuns sec;
  std::string sec_error;
  if (prepared) {
    try {
      sec = secondary_label_runs(w);
    } catch (const std::exception& e) {
      sec_error = e.what();
    }
  }
  auto needs_sec = [&](auto fn) {
    return needs_runs([&, fn]() -> Verdict {
      if (!sec_error.empty()) return {false, "secondary-label runs failed: " + sec_error};
      return fn();
    });
  };
  report(8, needs_sec([&] { return secondary_direction(sec); }));
  report(9, needs_sec([&] { return background_recall(sec); }));
  report(10, needs_runs([&] { return segment_selection(w); }));
  report(11, needs_runs([&] { return determinism(w); }));

  std::cout << (failures == 0 ? "all criteria PASS" : fmt("%d criteria FAIL", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}
