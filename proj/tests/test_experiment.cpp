#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <iterator>
#include <map>

#include "birdtl/error.hpp"
#include "birdtl/experiment.hpp"
#include "birdtl/schema.hpp"
#include "birdtl/synthgen.hpp"
#include "support.hpp"

using namespace birdtl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

const CorpusPaths& corpus() {
  static const CorpusPaths paths = [] {
    CorpusConfig cfg;
    cfg.n_classes = 3;
    cfg.per_class = 8;
    cfg.train_ratio = 0.5;
    cfg.val_ratio = 0.25;
    cfg.test_ratio = 0.25;
    cfg.duration = 3.0;
    cfg.n_noise_files = 1;
    cfg.noise_duration = 3.0;
    cfg.seed = 21;
    return make_corpus(cfg, testing::scratch_dir("exp_corpus")).paths;
  }();
  return paths;
}

json experiment_doc(const std::string& strategy = "deep_ft", int epochs = 2) {
  const auto& c = corpus();
  return {{"name", "t"},
          {"data",
           {{"vocab", c.classes.string()},
            {"train_manifest", c.manifest(Split::kTrain).string()},
            {"val_manifest", c.manifest(Split::kVal).string()},
            {"test_manifest", c.manifest(Split::kTest).string()},
            {"noise_manifest", c.noise_list.string()}}},
          {"model", {{"arch", "student_a"}, {"init_seed", 3}}},
          {"train", {{"strategy", strategy}, {"epochs", epochs}, {"batch_size", 4}, {"seed", 4}, {"lr", 0.02}}}};
}

std::map<fs::path, std::string> snapshot_dir(const fs::path& dir) {
  std::map<fs::path, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir)] = slurp(e.path());
  }
  return out;
}

// history.csv minus the wall-clock column
std::string mask_seconds(const std::string& csv) {
  std::string out;
  std::size_t start = 0;
  while (start < csv.size()) {
    std::size_t end = csv.find('\n', start);
    if (end == std::string::npos) end = csv.size();
    const std::string line = csv.substr(start, end - start);
    out += line.substr(0, line.rfind(',')) + "\n";
    start = end + 1;
  }
  return out;
}

}  // namespace

TEST_CASE("schema validator keywords") {
  const json schema = json::parse(R"({
    "type": "object", "required": ["a"], "additionalProperties": false,
    "definitions": {"unit": {"type": "number", "minimum": 0, "maximum": 1}},
    "properties": {
      "a": {"$ref": "#/definitions/unit"},
      "b": {"type": "array", "minItems": 1, "maxItems": 2, "items": {"enum": ["x", "y"]}},
      "c": {"type": ["integer", "null"], "exclusiveMinimum": 0},
      "d": {"oneOf": [{"type": "string"}, {"type": "object", "required": ["n"]}]}
    }})");
  CHECK(validate_schema(json::parse(R"({"a": 0.5, "b": ["x"], "c": null, "d": {"n": 1}})"), schema).empty());
  CHECK(validate_schema(json::parse(R"({"a": 0.5, "c": 3, "d": "s"})"), schema).empty());
  const auto errs = validate_schema(json::parse(R"({"a": 2, "b": [], "c": 0, "d": 5, "e": 1})"), schema);
  CHECK(errs.size() == 5);
  CHECK(validate_schema(json::parse(R"({"b": ["z", "x", "y"]})"), schema).size() == 3);  // missing a, bad z, too many
  CHECK(validate_schema(json::parse(R"({"a": 1, "c": 1.5})"), schema).size() == 1);
  CHECK_THROWS_AS(require_valid(json::array(), schema, "doc"), ConfigError);
}

TEST_CASE("published schemas are embedded and self-consistent") {
  CHECK(experiment_schema().at("required").size() == 3);
  CHECK(grid_schema().contains("properties"));
  CHECK(report_schema().at("properties").contains("per_class"));
  CHECK(validate_schema(experiment_doc(), experiment_schema()).empty());
}

TEST_CASE("experiment parsing: defaults, path resolution, errors") {
  json doc = experiment_doc();
  doc["data"]["vocab"] = "rel/classes.txt";
  const auto cfg = parse_experiment(doc, "/base/dir");
  CHECK(cfg.data.vocab == fs::path("/base/dir/rel/classes.txt"));
  CHECK(cfg.data.mel_preset == "passt");
  CHECK(cfg.train.mode == LabelMode::kSingleLabel);
  CHECK(cfg.eval.threshold == 0.2);
  CHECK(cfg.train.augment.mixup_prob == 0.6);
  const json resolved = cfg.to_json();
  CHECK(resolved["train"]["lr"] == 0.02);
  CHECK(parse_experiment(resolved, "/elsewhere").to_json() == resolved);  // to_json is a fixed point
  CHECK(experiment_checksum(cfg) == experiment_checksum(parse_experiment(resolved, "/x")));

  json unknown = experiment_doc();
  unknown["train"]["learning_rate"] = 0.1;
  CHECK_THROWS_AS(parse_experiment(unknown, "/"), ConfigError);
  json bad_arch = experiment_doc();
  bad_arch["model"]["arch"] = "resnet";
  CHECK_THROWS_AS(parse_experiment(bad_arch, "/"), ConfigError);
  CHECK_THROWS_AS(parse_experiment(experiment_doc("distill"), "/"), ConfigError);
  json ext = experiment_doc();
  ext["data"]["detector"] = {{"kind", "external"}};
  CHECK_THROWS_AS(parse_experiment(ext, "/"), ConfigError);
  json cut = experiment_doc();
  cut["eval"] = {{"regime_cutoffs", {100, 25}}};
  CHECK_THROWS_AS(parse_experiment(cut, "/"), ConfigError);
}

TEST_CASE("train, eval and the resolved snapshot reproduce bit-for-bit") {
  const auto dir = testing::scratch_dir("exp_run");
  const auto inputs_before = snapshot_dir(corpus().dir);
  const auto cfg = parse_experiment(experiment_doc("deep_ft", 3), "/");
  run_train(cfg, dir / "a");
  for (const char* f : {"config.json", "checkpoint.bin", "history.csv"}) CHECK(fs::exists(dir / "a" / f));

  // re-run from the snapshot it wrote
  run_train(load_experiment(dir / "a" / "config.json"), dir / "b");
  CHECK(slurp(dir / "a" / "checkpoint.bin") == slurp(dir / "b" / "checkpoint.bin"));
  CHECK(slurp(dir / "a" / "config.json") == slurp(dir / "b" / "config.json"));
  CHECK(mask_seconds(slurp(dir / "a" / "history.csv")) == mask_seconds(slurp(dir / "b" / "history.csv")));

  EvalRequest req;
  req.checkpoint = dir / "a" / "checkpoint.bin";
  req.manifest = corpus().manifest(Split::kTest);
  req.vocab = corpus().classes;
  req.train_manifest = corpus().manifest(Split::kTrain);
  const auto report = run_eval(req, dir / "eval1");
  run_eval(req, dir / "eval2");
  for (const char* f : {"scores.csv", "report.json", "report.txt"}) {
    CHECK(slurp(dir / "eval1" / f) == slurp(dir / "eval2" / f));
  }
  const json rj = json::parse(slurp(dir / "eval1" / "report.json"));
  CHECK(validate_schema(rj, report_schema()).empty());
  CHECK(report.n_recordings == 6);
  CHECK(rj["regimes"].size() == 1);
  CHECK(snapshot_dir(corpus().dir) == inputs_before);  // inputs untouched
}

TEST_CASE("eval options: threshold 0 gives recall 1, training split scores at least as well") {
  const auto dir = testing::scratch_dir("exp_eval");
  auto doc = experiment_doc("deep_ft", 12);
  doc["train"]["augment"] = {{"mixup_prob", 0.0}, {"noise_prob", 0.0}};
  run_train(parse_experiment(doc, "/"), dir / "run");
  EvalRequest req;
  req.checkpoint = dir / "run" / "checkpoint.bin";
  req.vocab = corpus().classes;
  req.manifest = corpus().manifest(Split::kTest);
  req.options.threshold = 0.0;
  CHECK(run_eval(req, dir / "t0").pr.recall == 1.0);
  req.options.threshold = 0.2;
  const double held_out = run_eval(req, dir / "test").f1;
  req.manifest = corpus().manifest(Split::kTrain);
  const double seen = run_eval(req, dir / "train").f1;
  CHECK(seen >= held_out);

  const auto other = testing::scratch_dir("exp_vocab");
  write(other / "classes.txt", "x\ny\n");
  req.vocab = other / "classes.txt";
  CHECK_THROWS_AS(run_eval(req, dir / "bad"), ConfigError);
}

TEST_CASE("grid: one invalid entry, failure row, resume without retraining") {
  const auto dir = testing::scratch_dir("exp_grid");
  write(dir / "good1.json", experiment_doc("shallow_ft", 1).dump());
  write(dir / "good2.json", experiment_doc("deep_ft", 1).dump());
  auto bad = experiment_doc();
  bad["train"]["epochs"] = 0;
  write(dir / "bad.json", bad.dump());
  write(dir / "grid.json", R"({"experiments": ["good1.json", "bad.json", {"name": "g2", "config": "good2.json"}]})");

  CHECK(run_grid(dir / "grid.json", dir / "out") == 1);
  const std::string summary = slurp(dir / "out" / "summary.csv");
  CHECK(summary.find("name,strategy,mAP,AUROC,epochs,time_per_epoch,total_time,status\n") == 0);
  CHECK(summary.find("good1,shallow_ft,") != std::string::npos);
  CHECK(summary.find("g2,deep_ft,") != std::string::npos);
  CHECK(summary.find("bad,,,,,,,failed\n") != std::string::npos);
  std::size_t rows = 0;
  for (char ch : summary) rows += ch == '\n';
  CHECK(rows == 4);

  const auto stamp = fs::last_write_time(dir / "out" / "good1" / "checkpoint.bin");
  std::ostringstream log;
  CHECK(run_grid(dir / "grid.json", dir / "out", &log) == 1);
  CHECK(slurp(dir / "out" / "summary.csv") == summary);
  CHECK(fs::last_write_time(dir / "out" / "good1" / "checkpoint.bin") == stamp);
  CHECK(log.str().find("[good1] resumed") != std::string::npos);
  CHECK(log.str().find("[g2] resumed") != std::string::npos);

  // editing a config invalidates its checksum
  auto changed = experiment_doc("shallow_ft", 2);
  write(dir / "good1.json", changed.dump());
  std::ostringstream log2;
  run_grid(dir / "grid.json", dir / "out", &log2);
  CHECK(log2.str().find("[good1] resumed") == std::string::npos);
  CHECK(log2.str().find("[g2] resumed") != std::string::npos);
}

TEST_CASE("grid schema violations are config errors") {
  const auto dir = testing::scratch_dir("exp_grid_bad");
  write(dir / "grid.json", R"({"experiments": []})");
  CHECK_THROWS_AS(run_grid(dir / "grid.json", dir / "out"), ConfigError);
}

TEST_CASE("detect writes keep masks for every chunk") {
  const auto dir = testing::scratch_dir("exp_detect");
  DetectRequest req;
  req.manifest = corpus().manifest(Split::kTest);
  req.vocab = corpus().classes;
  req.detector.kind = DetectorKind::kEnergy;
  run_detect(req, dir / "d.csv");
  const std::string out = slurp(dir / "d.csv");
  CHECK(out.find("chunk_id,start_time,score,keep\n") == 0);
  std::size_t rows = 0;
  for (char ch : out) rows += ch == '\n';
  CHECK(rows == 1 + 6);  // 6 test recordings of 3 s
  run_detect(req, dir / "d2.csv");
  CHECK(slurp(dir / "d2.csv") == out);
}
