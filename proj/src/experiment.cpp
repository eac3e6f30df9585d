#include "birdtl/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "birdtl/error.hpp"
#include "birdtl/schema.hpp"

namespace birdtl {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path resolve_path(const json& obj, const char* key, const fs::path& base) {
  if (!obj.contains(key)) return {};
  const std::string s = obj[key].get<std::string>();
  if (s.empty()) return {};
  fs::path p(s);
  if (p.is_relative()) p = base / p;
  return fs::absolute(p).lexically_normal();
}

void put_path(json& obj, const char* key, const fs::path& p) {
  if (!p.empty()) obj[key] = p.string();
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw ConfigError(what + " not found: " + p.string());
}

std::vector<std::string> checkpoint_classes(const Checkpoint& ck) {
  if (!ck.metadata.contains("classes")) return {};
  return ck.metadata["classes"].get<std::vector<std::string>>();
}

void log_epoch(std::ostream* log, const std::string& name, int total, const EpochRecord& r) {
  if (!log) return;
  char buf[200];
  std::snprintf(buf, sizeof buf, "[%s] epoch %d/%d loss %.5f val_f1 %.4f val_map %.4f (%.2fs)\n", name.c_str(),
                r.epoch, total, r.train_loss, r.val_f1, r.val_map, r.seconds);
  *log << buf << std::flush;
}

}  // namespace

nlohmann::json ExperimentConfig::to_json() const {
  json d;
  put_path(d, "vocab", data.vocab);
  put_path(d, "train_manifest", data.train_manifest);
  put_path(d, "val_manifest", data.val_manifest);
  put_path(d, "test_manifest", data.test_manifest);
  put_path(d, "noise_manifest", data.noise_manifest);
  d["use_secondary_labels"] = data.use_secondary_labels;
  d["mel_preset"] = data.mel_preset;
  d["chunk_stride"] = data.chunk_stride;
  json det{{"kind", std::string(to_string(data.detector.kind))}, {"k", data.detector.k},
           {"threshold", data.detector.threshold}};
  put_path(det, "score_file", data.detector.score_file);
  d["detector"] = det;

  json m{{"arch", model.arch}, {"init_seed", model.init_seed}, {"widths", model.widths}};
  put_path(m, "init_checkpoint", model.init_checkpoint);

  const auto& a = train.augment;
  json t{{"strategy", std::string(to_string(train.strategy))},
         {"mode", std::string(to_string(train.mode))},
         {"epochs", train.epochs},
         {"batch_size", train.batch_size},
         {"seed", train.seed},
         {"lr", train.effective_lr()},
         {"momentum", train.momentum},
         {"augment",
          {{"mixup_prob", a.mixup_prob},
           {"mixup_alpha", a.mixup_alpha},
           {"noise_prob", a.noise_prob},
           {"snr_min_db", a.noise_snr_db_min},
           {"snr_max_db", a.noise_snr_db_max},
           {"seed", a.seed}}}};
  json dist{{"lambda", train.distill.lambda},
            {"tau", train.distill.tau},
            {"symmetric_temperature", train.distill.symmetric_temperature}};
  put_path(dist, "teacher_checkpoint", teacher_checkpoint);
  t["distill"] = dist;

  json e{{"threshold", eval.threshold},
         {"regime_cutoffs", {eval.cutoffs.low_max, eval.cutoffs.medium_max}},
         {"f1_average", eval.macro_f1 ? "macro" : "micro"},
         {"foreground_background", eval.foreground_background}};
  return json{{"name", name}, {"data", d}, {"model", m}, {"train", t}, {"eval", e}};
}

ExperimentConfig parse_experiment(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  require_valid(doc, experiment_schema(), "experiment config");
  ExperimentConfig cfg;
  cfg.name = doc.value("name", std::string("experiment"));

  const json& d = doc["data"];
  cfg.data.vocab = resolve_path(d, "vocab", base_dir);
  cfg.data.train_manifest = resolve_path(d, "train_manifest", base_dir);
  cfg.data.val_manifest = resolve_path(d, "val_manifest", base_dir);
  cfg.data.test_manifest = resolve_path(d, "test_manifest", base_dir);
  cfg.data.noise_manifest = resolve_path(d, "noise_manifest", base_dir);
  cfg.data.use_secondary_labels = d.value("use_secondary_labels", false);
  cfg.data.mel_preset = d.value("mel_preset", std::string("passt"));
  cfg.data.chunk_stride = d.value("chunk_stride", kChunkSeconds);
  if (d.contains("detector")) {
    const json& det = d["detector"];
    cfg.data.detector.kind = parse_detector_kind(det.value("kind", std::string("none")));
    cfg.data.detector.k = det.value("k", 3.0);
    cfg.data.detector.threshold = det.value("threshold", 0.3);
    cfg.data.detector.score_file = resolve_path(det, "score_file", base_dir);
    if (cfg.data.detector.kind == DetectorKind::kExternal && cfg.data.detector.score_file.empty()) {
      throw ConfigError("data.detector: the external detector needs a score_file");
    }
  }

  const json& m = doc["model"];
  cfg.model.arch = m["arch"].get<std::string>();
  cfg.model.init_checkpoint = resolve_path(m, "init_checkpoint", base_dir);
  cfg.model.init_seed = m.value("init_seed", std::uint64_t{0});
  cfg.model.widths = m.value("widths", std::vector<int>{});

  const json& t = doc["train"];
  auto& tc = cfg.train;
  tc.strategy = parse_strategy(t["strategy"].get<std::string>());
  tc.mode = parse_label_mode(t.value("mode", std::string("single_label")));
  tc.use_secondary_labels = cfg.data.use_secondary_labels;
  tc.epochs = t.value("epochs", 10);
  tc.batch_size = t.value("batch_size", 16);
  tc.seed = t.value("seed", std::uint64_t{0});
  tc.lr = t.value("lr", 0.0);
  tc.momentum = t.value("momentum", 0.9);
  if (t.contains("augment")) {
    const json& a = t["augment"];
    tc.augment.mixup_prob = a.value("mixup_prob", tc.augment.mixup_prob);
    tc.augment.mixup_alpha = a.value("mixup_alpha", tc.augment.mixup_alpha);
    tc.augment.noise_prob = a.value("noise_prob", tc.augment.noise_prob);
    tc.augment.noise_snr_db_min = a.value("snr_min_db", tc.augment.noise_snr_db_min);
    tc.augment.noise_snr_db_max = a.value("snr_max_db", tc.augment.noise_snr_db_max);
    tc.augment.seed = a.value("seed", tc.augment.seed);
  }
  if (t.contains("distill")) {
    const json& ds = t["distill"];
    tc.distill.lambda = ds.value("lambda", 0.5);
    tc.distill.tau = ds.value("tau", 1.0);
    tc.distill.symmetric_temperature = ds.value("symmetric_temperature", false);
    cfg.teacher_checkpoint = resolve_path(ds, "teacher_checkpoint", base_dir);
  }
  tc.distill.mode = tc.mode;
  if (tc.strategy == Strategy::kDistill && cfg.teacher_checkpoint.empty()) {
    throw ConfigError("train.distill.teacher_checkpoint is required for strategy distill");
  }
  tc.validate();

  if (doc.contains("eval")) {
    const json& e = doc["eval"];
    cfg.eval.threshold = e.value("threshold", 0.2);
    if (e.contains("regime_cutoffs")) {
      cfg.eval.cutoffs.low_max = e["regime_cutoffs"][0].get<std::size_t>();
      cfg.eval.cutoffs.medium_max = e["regime_cutoffs"][1].get<std::size_t>();
      if (cfg.eval.cutoffs.low_max >= cfg.eval.cutoffs.medium_max) {
        throw ConfigError("eval.regime_cutoffs must be increasing");
      }
    }
    cfg.eval.macro_f1 = e.value("f1_average", std::string("micro")) == "macro";
    cfg.eval.foreground_background = e.value("foreground_background", true);
  }
  preset(cfg.data.mel_preset);
  return cfg;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  const json doc = read_json(path);
  try {
    return parse_experiment(doc, fs::absolute(path).parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string experiment_checksum(const ExperimentConfig& cfg) {
  const std::string text = cfg.to_json().dump();
  const auto h = fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TrainRun run_train(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, std::ostream* log) {
  require_file(cfg.data.vocab, "vocabulary");
  require_file(cfg.data.train_manifest, "train manifest");
  require_file(cfg.data.val_manifest, "val manifest");
  if (!cfg.model.init_checkpoint.empty()) require_file(cfg.model.init_checkpoint, "init checkpoint");
  if (cfg.train.strategy == Strategy::kDistill) require_file(cfg.teacher_checkpoint, "teacher checkpoint");
  if (!cfg.data.noise_manifest.empty()) require_file(cfg.data.noise_manifest, "noise manifest");

  const LabelVocabulary vocab = LabelVocabulary::load(cfg.data.vocab);
  const MelConfig mel = preset(cfg.data.mel_preset);
  const Activation act = activation_for(cfg.train.mode);

  std::optional<Network> teacher;
  if (cfg.train.strategy == Strategy::kDistill) {
    Checkpoint ck = load_checkpoint(cfg.teacher_checkpoint);
    const auto classes = checkpoint_classes(ck);
    if (!classes.empty() && classes != vocab.names()) {
      throw ConfigError("teacher checkpoint classes differ from the vocabulary");
    }
    if (ck.network.spec().activation != act) throw ConfigError("teacher activation does not match train.mode");
    teacher = freeze(std::move(ck.network), FreezeSelector::kBackbone);
  }

  ArchitectureOptions arch_opts;
  arch_opts.widths = cfg.model.widths;
  Network net(architecture(cfg.model.arch, static_cast<int>(vocab.size()), act, arch_opts), cfg.model.init_seed);
  if (!cfg.model.init_checkpoint.empty()) {
    const Checkpoint init = load_checkpoint(cfg.model.init_checkpoint);
    try {
      net.load_backbone(init.network);
    } catch (const ShapeError& e) {
      throw ConfigError(std::string("model.init_checkpoint: ") + e.what());
    }
  }

  const Manifest train_m = load_manifest(cfg.data.train_manifest, vocab);
  const Manifest val_m = load_manifest(cfg.data.val_manifest, vocab);
  const auto train_rows = train_m.filter(Split::kTrain);
  const auto val_rows = val_m.filter(Split::kVal);
  const bool energy = cfg.data.detector.kind == DetectorKind::kEnergy;
  const auto train_loaded = load_recordings(train_m, train_rows, mel, cfg.data.chunk_stride, energy);
  const auto val_loaded = load_recordings(val_m, val_rows, mel, cfg.data.chunk_stride);
  const TrainingSet trainset = build_training_set(train_loaded, vocab.size(), cfg.train.mode,
                                                  cfg.data.use_secondary_labels, mel, cfg.data.detector);
  const EvalSet valset = build_eval_set(val_loaded, mel);
  std::vector<AudioClip> noise;
  if (!cfg.data.noise_manifest.empty()) noise = load_noise_bank(cfg.data.noise_manifest, mel.sample_rate);

  fs::create_directories(out_dir);
  write_file(out_dir / "config.json", cfg.to_json().dump(2) + "\n");
  if (log) {
    *log << "[" << cfg.name << "] " << to_string(cfg.train.strategy) << " " << cfg.model.arch << ": "
         << trainset.chunks.size() << " training chunks (" << trainset.filtered_out << " filtered), "
         << valset.recordings.size() << " val recordings\n";
  }

  TrainRun run{run_training(trainset, valset, net, teacher ? &*teacher : nullptr, cfg.train, mel, noise, vocab,
                            [&](const EpochRecord& r) { log_epoch(log, cfg.name, cfg.train.epochs, r); }),
               out_dir / "checkpoint.bin", out_dir / "history.csv"};
  json meta{{"classes", vocab.names()},
            {"mel_preset", cfg.data.mel_preset},
            {"mode", std::string(to_string(cfg.train.mode))},
            {"strategy", std::string(to_string(cfg.train.strategy))},
            {"arch", cfg.model.arch},
            {"best_epoch", run.result.best_epoch}};
  Network best = freeze(run.result.network, FreezeSelector::kNone);
  save_checkpoint(run.checkpoint, best, meta);
  save_history_csv(run.history, run.result.history);
  return run;
}

MetricsReport run_eval(const EvalRequest& req, const std::filesystem::path& out_dir) {
  require_file(req.checkpoint, "checkpoint");
  require_file(req.manifest, "manifest");
  const Checkpoint ck = load_checkpoint(req.checkpoint);
  const auto classes = checkpoint_classes(ck);
  LabelVocabulary vocab;
  if (!req.vocab.empty()) {
    require_file(req.vocab, "vocabulary");
    vocab = LabelVocabulary::load(req.vocab);
    if (!classes.empty() && classes != vocab.names()) {
      throw ConfigError("vocabulary mismatch: checkpoint classes differ from " + req.vocab.string());
    }
  } else {
    if (classes.empty()) throw ConfigError("checkpoint has no class list; pass a vocabulary");
    vocab = LabelVocabulary(classes);
  }
  if (static_cast<std::size_t>(ck.network.spec().n_classes) != vocab.size()) {
    throw ConfigError("vocabulary mismatch: checkpoint has " + std::to_string(ck.network.spec().n_classes) +
                      " classes, vocabulary " + std::to_string(vocab.size()));
  }
  const MelConfig mel = preset(ck.metadata.value("mel_preset", std::string("passt")));
  LabelMode mode = ck.network.spec().activation == Activation::kSigmoid ? LabelMode::kMultiLabel
                                                                        : LabelMode::kSingleLabel;
  if (req.mode) mode = *req.mode;

  const Manifest m = load_manifest(req.manifest, vocab);
  const auto rows = req.split ? m.filter(*req.split) : m.recordings;
  const EvalSet set = build_eval_set(load_recordings(m, rows, mel), mel);
  const ScoreMatrix scores = score_eval_set(ck.network, set, vocab);

  ReportOptions opts = req.options;
  opts.mode = mode;
  if (!req.train_manifest.empty()) {
    const Manifest tm = load_manifest(req.train_manifest, vocab);
    opts.train_counts = primary_counts(tm.filter(Split::kTrain), vocab.size());
  }
  const MetricsReport report = build_report(scores, set.recordings, vocab, opts);
  require_valid(report.to_json(), report_schema(), "metrics report");

  fs::create_directories(out_dir);
  save_score_matrix(out_dir / "scores.csv", scores);
  write_report(out_dir, report);
  return report;
}

int run_grid(const std::filesystem::path& grid_path, const std::filesystem::path& out_dir, std::ostream* log) {
  const json doc = read_json(grid_path);
  require_valid(doc, grid_schema(), grid_path.string());
  const fs::path base = fs::absolute(grid_path).parent_path();

  std::vector<std::pair<std::string, fs::path>> entries;
  std::set<std::string> names;
  for (const auto& e : doc["experiments"]) {
    fs::path p = e.is_string() ? fs::path(e.get<std::string>()) : fs::path(e["config"].get<std::string>());
    if (p.is_relative()) p = base / p;
    const std::string name = e.is_string() ? p.stem().string() : e["name"].get<std::string>();
    if (!names.insert(name).second) throw ConfigError("grid: duplicate experiment name '" + name + "'");
    entries.emplace_back(name, p.lexically_normal());
  }

  fs::create_directories(out_dir);
  std::ostringstream summary;
  summary << "name,strategy,mAP,AUROC,epochs,time_per_epoch,total_time,status\n";
  int failures = 0;
  for (const auto& [name, path] : entries) {
    const fs::path dir = out_dir / name;
    const fs::path status_path = dir / "run_status.json";
    try {
      const ExperimentConfig cfg = load_experiment(path);
      if (cfg.data.test_manifest.empty()) throw ConfigError("grid experiments need data.test_manifest");
      const std::string checksum = experiment_checksum(cfg);

      bool resumed = false;
      if (fs::exists(status_path) && fs::exists(dir / "history.csv") && fs::exists(dir / "report.json")) {
        const json st = read_json(status_path);
        resumed = st.value("status", "") == "ok" && st.value("checksum", "") == checksum;
      }
      if (resumed) {
        if (log) *log << "[" << name << "] resumed (checksum " << checksum << ")\n";
      } else {
        fs::remove(status_path);
        const TrainRun run = run_train(cfg, dir, log);
        EvalRequest req;
        req.checkpoint = run.checkpoint;
        req.manifest = cfg.data.test_manifest;
        req.vocab = cfg.data.vocab;
        req.split = Split::kTest;
        req.train_manifest = cfg.data.train_manifest;
        req.options.threshold = cfg.eval.threshold;
        req.options.cutoffs = cfg.eval.cutoffs;
        req.options.macro_f1 = cfg.eval.macro_f1;
        req.options.foreground_background = cfg.eval.foreground_background;
        run_eval(req, dir);
        write_file(status_path, json{{"status", "ok"}, {"checksum", checksum}}.dump(2) + "\n");
      }
      const auto history = load_history_csv(dir / "history.csv");
      const json report = read_json(dir / "report.json");
      double total = 0.0;
      for (const auto& h : history) total += h.seconds;
      char row[256];
      std::snprintf(row, sizeof row, "%s,%s,%.6f,%.6f,%zu,%.3f,%.3f,ok\n", name.c_str(),
                    std::string(to_string(cfg.train.strategy)).c_str(), report["map"].get<double>(),
                    report["auroc"].get<double>(), history.size(),
                    history.empty() ? 0.0 : total / static_cast<double>(history.size()), total);
      summary << row;
    } catch (const std::exception& e) {
      ++failures;
      if (log) *log << "[" << name << "] failed: " << e.what() << "\n";
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (!ec) write_file(status_path, json{{"status", "failed"}, {"error", e.what()}}.dump(2) + "\n");
      summary << name << ",,,,,,,failed\n";
    }
  }
  write_file(out_dir / "summary.csv", summary.str());
  return failures == 0 ? 0 : 1;
}

void run_detect(const DetectRequest& req, const std::filesystem::path& out_csv) {
  require_file(req.manifest, "manifest");
  require_file(req.vocab, "vocabulary");
  const LabelVocabulary vocab = LabelVocabulary::load(req.vocab);
  const MelConfig mel = preset(req.mel_preset);
  const Manifest m = load_manifest(req.manifest, vocab);
  const bool energy = req.detector.kind == DetectorKind::kEnergy;
  const auto loaded = load_recordings(m, m.recordings, mel, kChunkSeconds, energy);
  std::map<std::string, double> external;
  if (req.detector.kind == DetectorKind::kExternal) {
    require_file(req.detector.score_file, "detector score file");
    external = load_detector_scores(req.detector.score_file);
  }
  std::vector<Chunk> chunks;
  std::vector<DetectorDecision> decisions;
  for (const auto& lr : loaded) {
    for (const auto& c : lr.chunks) {
      DetectorDecision d{c.id(), 1.0, true};
      if (energy) {
        d = energy_detector(c, *lr.energy, mel, req.detector.k);
      } else if (req.detector.kind == DetectorKind::kExternal) {
        const auto it = external.find(c.id());
        if (it == external.end()) throw ConfigError("detector score file has no entry for " + c.id());
        d.score = it->second;
        d.keep = it->second >= req.detector.threshold;
      }
      chunks.push_back(c);
      decisions.push_back(d);
    }
  }
  if (out_csv.has_parent_path()) fs::create_directories(out_csv.parent_path());
  save_detector_decisions(out_csv, chunks, decisions);
}

}  // namespace birdtl
