#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <fstream>
#include <iterator>

#include <json.hpp>

#include "support.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path& work() {
  static const fs::path dir = testing::scratch_dir("cli");
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(BIRDTL_EXE) + " " + args + " >>" + (work() / "cli.log").string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p, std::ios::binary) << s; }

const fs::path& corpus() {
  static const fs::path dir = [] {
    const fs::path d = work() / "corpus";
    REQUIRE(run("synth --out " + d.string() +
                " --n-classes 3 --per-class 6 --split 0.5,0.25,0.25 --duration 3 --noise-files 1 --seed 3") == 0);
    return d;
  }();
  return dir;
}

json experiment(const std::string& strategy = "deep_ft") {
  const auto c = corpus();
  return {{"data",
           {{"vocab", (c / "classes.txt").string()},
            {"train_manifest", (c / "train.csv").string()},
            {"val_manifest", (c / "val.csv").string()},
            {"test_manifest", (c / "test.csv").string()}}},
          {"model", {{"arch", "student_a"}}},
          {"train", {{"strategy", strategy}, {"epochs", 2}, {"batch_size", 4}}}};
}

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(run("--help") == 0);
  CHECK(run("train --help") == 0);
  CHECK(run("") == 2);
  CHECK(run("bogus") == 2);
  CHECK(run("train") == 2);  // --config is required
}

TEST_CASE("synth: invalid split is a config error; snapshot re-run is byte-identical") {
  CHECK(run("synth --out " + (work() / "bad").string() + " --split 0.5,0.5,0.5") == 2);
  const auto a = corpus();
  const auto b = work() / "corpus_again";
  REQUIRE(run("synth --config " + (a / "synth_config.json").string() + " --out " + b.string()) == 0);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    CHECK_MESSAGE(slurp(e.path()) == slurp(b / rel), rel.string());
  }
}

TEST_CASE("train and eval exit codes") {
  const auto dir = work() / "train";
  fs::create_directories(dir);
  write(dir / "ok.json", experiment().dump());
  CHECK(run("train --config " + (dir / "ok.json").string() + " --out " + (dir / "ok").string()) == 0);
  CHECK(fs::exists(dir / "ok" / "config.json"));

  CHECK(run("train --config " + (dir / "missing.json").string()) == 2);
  write(dir / "broken.json", "{not json");
  CHECK(run("train --config " + (dir / "broken.json").string()) == 2);

  auto distill = experiment("distill");
  distill["train"]["distill"] = {{"teacher_checkpoint", (dir / "nope.bin").string()}};
  write(dir / "distill.json", distill.dump());
  CHECK(run("train --config " + (dir / "distill.json").string() + " --out " + (dir / "d").string()) == 2);

  auto diverge = experiment();
  diverge["train"]["lr"] = 1e30;
  write(dir / "diverge.json", diverge.dump());
  CHECK(run("train --config " + (dir / "diverge.json").string() + " --out " + (dir / "div").string()) == 3);

  const std::string ck = (dir / "ok" / "checkpoint.bin").string();
  const std::string test = (corpus() / "test.csv").string();
  CHECK(run("eval --checkpoint " + ck + " --manifest " + test + " --threshold 0 --out " + (dir / "e0").string()) == 0);
  CHECK(json::parse(slurp(dir / "e0" / "report.json"))["recall"] == 1.0);
  write(dir / "other_classes.txt", "a\nb\n");
  CHECK(run("eval --checkpoint " + ck + " --manifest " + test + " --vocab " + (dir / "other_classes.txt").string() +
            " --out " + (dir / "e1").string()) == 2);
  CHECK(run("eval --checkpoint " + ck + " --manifest " + test + " --split holdout --out " + (dir / "e2").string()) == 2);

  // an undecodable recording is a decode error
  const fs::path bad_corpus = dir / "bad_audio";
  fs::create_directories(bad_corpus);
  write(bad_corpus / "x.wav", "RIFX....");
  write(bad_corpus / "m.csv", "filepath,primary_label,secondary_labels,split\nx.wav,sp01,,test\n");
  CHECK(run("eval --checkpoint " + ck + " --manifest " + (bad_corpus / "m.csv").string() + " --out " +
            (dir / "e3").string()) == 2);

  // eval re-run from its snapshot reproduces every output
  CHECK(run("eval --checkpoint " + ck + " --manifest " + test + " --out " + (dir / "e4").string()) == 0);
  CHECK(run("eval --config " + (dir / "e4" / "eval_config.json").string() + " --out " + (dir / "e5").string()) == 0);
  for (const char* f : {"scores.csv", "report.json", "report.txt", "eval_config.json"}) {
    CHECK_MESSAGE(slurp(dir / "e4" / f) == slurp(dir / "e5" / f), f);
  }
}

TEST_CASE("grid: partial failure exits 1 with a failure row") {
  const auto dir = work() / "grid";
  fs::create_directories(dir);
  write(dir / "a.json", experiment("shallow_ft").dump());
  write(dir / "b.json", experiment("deep_ft").dump());
  auto bad = experiment();
  bad["model"]["arch"] = "transformer";
  write(dir / "bad.json", bad.dump());
  write(dir / "grid.json", R"({"experiments": ["a.json", "bad.json", "b.json"]})");
  CHECK(run("grid --config " + (dir / "grid.json").string() + " --out " + (dir / "out").string()) == 1);
  const std::string summary = slurp(dir / "out" / "summary.csv");
  CHECK(summary.find("bad,,,,,,,failed") != std::string::npos);
  CHECK(summary.find("a,shallow_ft,") != std::string::npos);
  CHECK(summary.find("b,deep_ft,") != std::string::npos);

  write(dir / "ok_grid.json", R"({"experiments": ["a.json", "b.json"]})");
  CHECK(run("grid --config " + (dir / "ok_grid.json").string() + " --out " + (dir / "out").string()) == 0);
}

TEST_CASE("detect: energy masks, external scores, snapshot re-run") {
  const auto dir = work() / "detect";
  const std::string m = (corpus() / "test.csv").string(), v = (corpus() / "classes.txt").string();
  CHECK(run("detect --manifest " + m + " --vocab " + v + " --out " + (dir / "a").string()) == 0);
  const std::string a = slurp(dir / "a" / "decisions.csv");
  CHECK(a.find("chunk_id,start_time,score,keep\n") == 0);
  CHECK(run("detect --config " + (dir / "a" / "detect_config.json").string() + " --out " + (dir / "b").string()) == 0);
  CHECK(slurp(dir / "b" / "decisions.csv") == a);
  CHECK(run("detect --manifest " + m + " --vocab " + v + " --kind external --out " + (dir / "c").string()) == 2);
  CHECK(run("detect --manifest " + m + " --vocab " + v + " --kind wavelet --out " + (dir / "c").string()) == 2);
}
