// birdtl: synth | train | eval | grid | detect
//
// Exit codes: 0 ok, 1 partial grid failure or runtime error, 2 config or
// validation error, 3 training divergence.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "birdtl/error.hpp"
#include "birdtl/experiment.hpp"
#include "birdtl/synthgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace birdtl;

namespace {

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": invalid JSON: " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

std::string absolute_string(const std::string& s) {
  return s.empty() ? s : fs::absolute(s).lexically_normal().string();
}

std::vector<double> parse_list(const std::string& text, std::size_t expected, const char* what) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + ": cannot parse '" + item + "'");
    }
  }
  if (v.size() != expected) {
    throw ConfigError(std::string(what) + ": expected " + std::to_string(expected) + " comma-separated values");
  }
  return v;
}

struct SynthArgs {
  std::string out = "corpus";
  std::string config;
  CorpusConfig cfg;
  std::string split = "0.7,0.1,0.2";
};

int cmd_synth(SynthArgs& a) {
  CorpusConfig cfg = a.cfg;
  if (!a.config.empty()) {
    json j = read_json(a.config);
    if (j.contains("config")) j = j["config"];
    try {
      cfg.n_classes = j.value("n_classes", cfg.n_classes);
      cfg.per_class = j.value("per_class", cfg.per_class);
      cfg.bg_rate = j.value("bg_rate", cfg.bg_rate);
      if (j.contains("split")) {
        const auto s = j["split"].get<std::vector<double>>();
        if (s.size() != 3) throw ConfigError("split must hold three ratios");
        cfg.train_ratio = s[0];
        cfg.val_ratio = s[1];
        cfg.test_ratio = s[2];
      }
      cfg.incomplete_fraction = j.value("incomplete_fraction", cfg.incomplete_fraction);
      cfg.duration = j.value("duration", cfg.duration);
      cfg.sample_rate = j.value("sample_rate", cfg.sample_rate);
      cfg.noise_level = j.value("noise_level", cfg.noise_level);
      if (j.contains("bg_gain")) {
        const auto g = j["bg_gain"].get<std::vector<double>>();
        if (g.size() != 2) throw ConfigError("bg_gain must hold two values");
        cfg.bg_gain_min = g[0];
        cfg.bg_gain_max = g[1];
      }
      cfg.n_noise_files = j.value("n_noise_files", cfg.n_noise_files);
      cfg.noise_duration = j.value("noise_duration", cfg.noise_duration);
      cfg.seed = j.value("seed", cfg.seed);
    } catch (const json::exception& e) {
      throw ConfigError(a.config + ": " + e.what());
    }
  } else {
    const auto s = parse_list(a.split, 3, "--split");
    cfg.train_ratio = s[0];
    cfg.val_ratio = s[1];
    cfg.test_ratio = s[2];
  }
  const auto summary = make_corpus(cfg, a.out);
  write_json(fs::path(a.out) / "synth_config.json", cfg.to_json());
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    std::cout << summary.paths.manifest(s).string() << "\n";
    std::cout << summary.paths.manifest(s, true).string() << "\n";
  }
  std::cout << summary.paths.classes.string() << "\n" << summary.paths.noise_list.string() << "\n";
  return 0;
}

int cmd_train(const std::string& config, const std::string& out) {
  const ExperimentConfig cfg = load_experiment(config);
  const TrainRun run = run_train(cfg, out, &std::cerr);
  std::cout << run.checkpoint.string() << "\n" << run.history.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string config, checkpoint, manifest, vocab, split, mode, train_manifest, out;
  double threshold = 0.2;
  std::string cutoffs = "25,100";
  std::string f1_average = "micro";
  bool no_fg_bg = false;
};

int cmd_eval(EvalArgs a) {
  json req;
  if (!a.config.empty()) {
    req = read_json(a.config);
  } else {
    if (a.checkpoint.empty() || a.manifest.empty()) throw ConfigError("eval needs --checkpoint and --manifest");
    const auto c = parse_list(a.cutoffs, 2, "--cutoffs");
    req = {{"checkpoint", absolute_string(a.checkpoint)},
           {"manifest", absolute_string(a.manifest)},
           {"vocab", absolute_string(a.vocab)},
           {"split", a.split},
           {"mode", a.mode},
           {"train_manifest", absolute_string(a.train_manifest)},
           {"threshold", a.threshold},
           {"regime_cutoffs", {static_cast<std::size_t>(c[0]), static_cast<std::size_t>(c[1])}},
           {"f1_average", a.f1_average},
           {"foreground_background", !a.no_fg_bg}};
  }
  EvalRequest r;
  try {
    r.checkpoint = req.at("checkpoint").get<std::string>();
    r.manifest = req.at("manifest").get<std::string>();
    r.vocab = req.value("vocab", std::string());
    r.train_manifest = req.value("train_manifest", std::string());
    const std::string split = req.value("split", std::string());
    if (!split.empty()) r.split = parse_split(split);
    const std::string mode = req.value("mode", std::string());
    if (!mode.empty()) r.mode = parse_label_mode(mode);
    r.options.threshold = req.value("threshold", 0.2);
    if (r.options.threshold < 0.0) throw ConfigError("threshold must be >= 0");
    const auto cut = req.value("regime_cutoffs", std::vector<std::size_t>{25, 100});
    if (cut.size() != 2 || cut[0] >= cut[1]) throw ConfigError("regime cutoffs must be two increasing counts");
    r.options.cutoffs = {cut[0], cut[1]};
    const std::string avg = req.value("f1_average", std::string("micro"));
    if (avg != "micro" && avg != "macro") throw ConfigError("f1_average must be micro or macro");
    r.options.macro_f1 = avg == "macro";
    r.options.foreground_background = req.value("foreground_background", true);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("eval request: ") + e.what());
  }
  const fs::path out = a.out.empty() ? fs::path("eval") : fs::path(a.out);
  const MetricsReport report = run_eval(r, out);
  write_json(out / "eval_config.json", req);
  std::cout << report.to_text();
  return 0;
}

int cmd_grid(const std::string& config, const std::string& out) {
  const int code = run_grid(config, out, &std::cerr);
  std::ifstream summary(fs::path(out) / "summary.csv");
  std::cout << summary.rdbuf();
  return code;
}

struct DetectArgs {
  std::string config, manifest, vocab, kind = "energy", scores, out = "detect", mel_preset = "passt";
  double k = 3.0;
  double threshold = 0.3;
};

int cmd_detect(const DetectArgs& a) {
  json req;
  if (!a.config.empty()) {
    req = read_json(a.config);
  } else {
    req = {{"manifest", absolute_string(a.manifest)}, {"vocab", absolute_string(a.vocab)},
           {"kind", a.kind},  {"k", a.k},
           {"score_file", absolute_string(a.scores)},  {"threshold", a.threshold},
           {"mel_preset", a.mel_preset}};
  }
  DetectRequest r;
  try {
    r.manifest = req.at("manifest").get<std::string>();
    r.vocab = req.at("vocab").get<std::string>();
    r.detector.kind = parse_detector_kind(req.value("kind", std::string("energy")));
    r.detector.k = req.value("k", 3.0);
    r.detector.score_file = req.value("score_file", std::string());
    r.detector.threshold = req.value("threshold", 0.3);
    r.mel_preset = req.value("mel_preset", std::string("passt"));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("detect request: ") + e.what());
  }
  if (r.detector.kind == DetectorKind::kExternal && r.detector.score_file.empty()) {
    throw ConfigError("the external detector needs --scores");
  }
  const fs::path out(a.out);
  fs::create_directories(out);
  run_detect(r, out / "decisions.csv");
  write_json(out / "detect_config.json", req);
  std::cout << (out / "decisions.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"birdtl: desk-scale bird-sound transfer learning"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic multi-species corpus");
  s->add_option("--out", synth.out, "output directory")->capture_default_str();
  s->add_option("--config", synth.config, "corpus config JSON (e.g. a previous synth_config.json)");
  s->add_option("--n-classes", synth.cfg.n_classes, "number of species")->capture_default_str();
  s->add_option("--per-class", synth.cfg.per_class, "recordings per species")->capture_default_str();
  s->add_option("--bg-rate", synth.cfg.bg_rate, "fraction of recordings with background species")->capture_default_str();
  s->add_option("--split", synth.split, "train,val,test ratios")->capture_default_str();
  s->add_option("--incomplete-fraction", synth.cfg.incomplete_fraction,
                "fraction of secondary labels deleted in *_incomplete.csv")->capture_default_str();
  s->add_option("--duration", synth.cfg.duration, "recording length in seconds")->capture_default_str();
  s->add_option("--sample-rate", synth.cfg.sample_rate, "Hz")->capture_default_str();
  s->add_option("--noise-level", synth.cfg.noise_level, "pink-noise floor RMS")->capture_default_str();
  s->add_option("--noise-files", synth.cfg.n_noise_files, "noise bank size")->capture_default_str();
  s->add_option("--seed", synth.cfg.seed, "corpus seed")->capture_default_str();

  std::string train_config, train_out = "run";
  auto* t = app.add_subcommand("train", "train one experiment");
  t->add_option("--config", train_config, "experiment config JSON")->required();
  t->add_option("--out", train_out, "output directory")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "score a checkpoint on a manifest and write reports");
  e->add_option("--config", ev.config, "eval request JSON (e.g. a previous eval_config.json)");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file");
  e->add_option("--manifest", ev.manifest, "manifest CSV");
  e->add_option("--vocab", ev.vocab, "class list; must match the checkpoint");
  e->add_option("--split", ev.split, "only rows of this split (train, val, test)");
  e->add_option("--mode", ev.mode, "single_label or multi_label metric suite");
  e->add_option("--threshold", ev.threshold, "precision/recall threshold")->capture_default_str();
  e->add_option("--cutoffs", ev.cutoffs, "regime cutoffs low,medium")->capture_default_str();
  e->add_option("--f1-average", ev.f1_average, "micro or macro")->capture_default_str();
  e->add_option("--train-manifest", ev.train_manifest, "training manifest for the regime table");
  e->add_flag("--no-fg-bg", ev.no_fg_bg, "skip the foreground/background analysis");
  e->add_option("--out", ev.out, "output directory (default: eval)");

  std::string grid_config, grid_out = "grid";
  auto* g = app.add_subcommand("grid", "run a list of experiments and summarize them");
  g->add_option("--config", grid_config, "grid config JSON")->required();
  g->add_option("--out", grid_out, "output directory")->capture_default_str();

  DetectArgs det;
  auto* d = app.add_subcommand("detect", "run a segment detector over a manifest");
  d->add_option("--config", det.config, "detect request JSON (e.g. a previous detect_config.json)");
  d->add_option("--manifest", det.manifest, "manifest CSV");
  d->add_option("--vocab", det.vocab, "class list");
  d->add_option("--kind", det.kind, "energy or external")->capture_default_str();
  d->add_option("--k", det.k, "energy rule: MADs above the median")->capture_default_str();
  d->add_option("--scores", det.scores, "external detector scores (chunk_id,score)");
  d->add_option("--threshold", det.threshold, "external detector threshold")->capture_default_str();
  d->add_option("--mel-preset", det.mel_preset, "passt or psla")->capture_default_str();
  d->add_option("--out", det.out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 2;
  }

  try {
    if (*s) return cmd_synth(synth);
    if (*t) return cmd_train(train_config, train_out);
    if (*e) return cmd_eval(ev);
    if (*g) return cmd_grid(grid_config, grid_out);
    if (*d) return cmd_detect(det);
  } catch (const DivergenceError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 3;
  } catch (const ConfigError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const DecodeError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const ShapeError& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 0;
}
