#include "birdtl/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "birdtl/error.hpp"
#include "birdtl/rng.hpp"

namespace birdtl {
namespace {

constexpr double kLowestBase = 700.0;
constexpr double kHighestBase = 5500.0;
constexpr double kMinSeparation = 1.15;
constexpr double kMultLo = 0.85;
constexpr double kMultHi = 1.18;
constexpr double kCallPeak = 0.5;

std::string species_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "sp%02d", i + 1);
  return buf;
}

void add_call(std::vector<float>& out, const SpeciesModel& s, double start, int rate, double phase0) {
  double t0 = start;
  for (const auto& note : s.call) {
    const auto first = static_cast<std::ptrdiff_t>(std::ceil(t0 * rate));
    const auto len = static_cast<std::ptrdiff_t>(note.duration * rate);
    const double f0 = s.base_freq * note.f_start;
    const double f1 = s.base_freq * note.f_end;
    for (std::ptrdiff_t k = 0; k < len; ++k) {
      const std::ptrdiff_t idx = first + k;
      if (idx < 0) continue;
      if (idx >= static_cast<std::ptrdiff_t>(out.size())) break;
      const double t = static_cast<double>(k) / rate;
      const double phase = phase0 + 2.0 * std::numbers::pi * (f0 * t + 0.5 * (f1 - f0) * t * t / note.duration);
      const double env = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(k) / len);
      out[static_cast<std::size_t>(idx)] += static_cast<float>(kCallPeak * note.amplitude * env * std::sin(phase));
    }
    t0 += note.duration + note.gap_after;
  }
}

}  // namespace

double SpeciesModel::min_freq() const {
  double m = base_freq;
  for (const auto& n : call) m = std::min(m, base_freq * std::min(n.f_start, n.f_end));
  return m;
}

double SpeciesModel::max_freq() const {
  double m = base_freq;
  for (const auto& n : call) m = std::max(m, base_freq * std::max(n.f_start, n.f_end));
  return m;
}

double SpeciesModel::call_duration() const {
  double d = 0.0;
  for (const auto& n : call) d += n.duration + n.gap_after;
  return d;
}

nlohmann::json SpeciesModel::to_json() const {
  nlohmann::json notes = nlohmann::json::array();
  for (const auto& n : call) {
    notes.push_back({{"duration", n.duration}, {"f_start", n.f_start}, {"f_end", n.f_end},
                     {"amplitude", n.amplitude}, {"gap_after", n.gap_after}});
  }
  return {{"name", name}, {"base_freq", base_freq}, {"call_rate", call_rate}, {"call", notes}};
}

std::vector<SpeciesModel> make_species(int n, std::uint64_t seed) {
  if (n < 2) throw ConfigError("synth: n_classes must be >= 2");
  const double step = std::pow(kHighestBase / kLowestBase, 1.0 / (n - 1));
  if (step < kMinSeparation) {
    throw ConfigError("synth: at most " +
                      std::to_string(static_cast<int>(std::log(kHighestBase / kLowestBase) /
                                                      std::log(kMinSeparation)) + 1) +
                      " species fit the frequency range");
  }
  // Jitter small enough that two neighbours moving toward each other stay apart.
  const double jitter = std::min(0.03, (step / kMinSeparation - 1.0) / 2.2);
  std::vector<SpeciesModel> out;
  for (int i = 0; i < n; ++i) {
    Rng rng = derive_rng(seed, {1, static_cast<std::uint64_t>(i)});
    SpeciesModel s;
    s.name = species_name(i);
    s.base_freq = kLowestBase * std::pow(step, i) * (1.0 + uniform(rng, -jitter, jitter));
    s.call_rate = uniform(rng, 0.8, 1.6);
    const int notes = 1 + static_cast<int>(uniform_index(rng, 3));
    for (int k = 0; k < notes; ++k) {
      Note note;
      note.duration = uniform(rng, 0.06, 0.2);
      note.f_start = uniform(rng, kMultLo, kMultHi);
      note.f_end = uniform(rng, kMultLo, kMultHi);
      note.amplitude = uniform(rng, 0.6, 1.0);
      note.gap_after = uniform(rng, 0.02, 0.06);
      s.call.push_back(note);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<float> render_species_track(const SceneSpec& spec, const SpeciesModel& species, std::size_t index) {
  const auto n = static_cast<std::size_t>(std::llround(spec.duration * spec.sample_rate));
  std::vector<float> out(n, 0.0f);
  Rng rng = derive_rng(spec.seed, {7, static_cast<std::uint64_t>(index)});
  const double period = 1.0 / species.call_rate;
  double t = uniform(rng, 0.0, period) - 0.5 * species.call_duration();
  t = std::max(t, 0.0);
  while (t < spec.duration) {
    add_call(out, species, t, spec.sample_rate, uniform(rng, 0.0, 2.0 * std::numbers::pi));
    t += period * uniform(rng, 0.6, 1.4);
  }
  return out;
}

std::vector<float> pink_noise(std::size_t n, double rms_level, std::uint64_t seed) {
  std::vector<float> out(n, 0.0f);
  if (n == 0 || rms_level <= 0.0) return out;
  Rng rng(splitmix64(seed ^ 0x9196E));
  std::normal_distribution<double> white(0.0, 1.0);
  // Kellet's refined pink filter.
  double b0 = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0, b5 = 0, b6 = 0;
  std::vector<double> tmp(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double w = white(rng);
    b0 = 0.99886 * b0 + w * 0.0555179;
    b1 = 0.99332 * b1 + w * 0.0750759;
    b2 = 0.96900 * b2 + w * 0.1538520;
    b3 = 0.86650 * b3 + w * 0.3104856;
    b4 = 0.55000 * b4 + w * 0.5329522;
    b5 = -0.7616 * b5 - w * 0.0168980;
    tmp[i] = b0 + b1 + b2 + b3 + b4 + b5 + b6 + w * 0.5362;
    b6 = w * 0.115926;
  }
  double mean = std::accumulate(tmp.begin(), tmp.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (auto& v : tmp) {
    v -= mean;
    ss += v * v;
  }
  const double scale = ss > 0 ? rms_level / std::sqrt(ss / static_cast<double>(n)) : 0.0;
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(tmp[i] * scale);
  return out;
}

Scene render_scene(const SceneSpec& spec, const std::vector<SpeciesModel>& species, const LabelVocabulary& vocab) {
  if (spec.duration <= 0.0 || spec.sample_rate <= 0) throw ConfigError("scene: bad duration or rate");
  if (spec.foreground >= species.size()) throw ConfigError("scene: foreground out of range");
  Scene scene;
  scene.clip.sample_rate = spec.sample_rate;
  scene.clip.samples = render_species_track(spec, species[spec.foreground], spec.foreground);
  scene.rec.primary_label = vocab.id(species[spec.foreground].name);
  for (const auto& [idx, gain] : spec.background) {
    if (idx >= species.size()) throw ConfigError("scene: background species out of range");
    if (idx == spec.foreground) throw ConfigError("scene: foreground listed as background");
    if (!(gain > 0.0)) throw ConfigError("scene: background gain must be positive");
    const auto track = render_species_track(spec, species[idx], idx);
    for (std::size_t i = 0; i < track.size(); ++i) scene.clip.samples[i] += static_cast<float>(gain * track[i]);
    scene.rec.secondary_labels.push_back(vocab.id(species[idx].name));
  }
  const auto noise = pink_noise(scene.clip.samples.size(), spec.noise_level, spec.seed);
  for (std::size_t i = 0; i < noise.size(); ++i) {
    scene.clip.samples[i] = std::clamp(scene.clip.samples[i] + noise[i], -1.0f, 1.0f);
  }
  std::sort(scene.rec.secondary_labels.begin(), scene.rec.secondary_labels.end());
  scene.rec.secondary_labels.erase(std::unique(scene.rec.secondary_labels.begin(), scene.rec.secondary_labels.end()),
                                   scene.rec.secondary_labels.end());
  return scene;
}

void CorpusConfig::validate() const {
  if (n_classes < 2) throw ConfigError("synth: n_classes must be >= 2");
  if (per_class < 1) throw ConfigError("synth: per_class must be >= 1");
  if (bg_rate < 0.0 || bg_rate > 1.0) throw ConfigError("synth: bg_rate must lie in [0, 1]");
  if (train_ratio < 0 || val_ratio < 0 || test_ratio < 0) throw ConfigError("synth: split ratios must be >= 0");
  if (std::abs(train_ratio + val_ratio + test_ratio - 1.0) > 1e-9) {
    throw ConfigError("synth: split ratios must sum to 1 (got " +
                      std::to_string(train_ratio + val_ratio + test_ratio) + ")");
  }
  if (incomplete_fraction < 0.0 || incomplete_fraction > 1.0) {
    throw ConfigError("synth: incomplete_fraction must lie in [0, 1]");
  }
  if (duration <= 0.0 || noise_duration <= 0.0) throw ConfigError("synth: durations must be positive");
  if (sample_rate < 16000) throw ConfigError("synth: sample_rate must be >= 16000");
  if (noise_level < 0.0) throw ConfigError("synth: noise_level must be >= 0");
  if (!(bg_gain_min > 0.0) || bg_gain_max < bg_gain_min) throw ConfigError("synth: bad background gain range");
  if (n_noise_files < 0) throw ConfigError("synth: n_noise_files must be >= 0");
}

nlohmann::json CorpusConfig::to_json() const {
  return {{"n_classes", n_classes},
          {"per_class", per_class},
          {"bg_rate", bg_rate},
          {"split", {train_ratio, val_ratio, test_ratio}},
          {"incomplete_fraction", incomplete_fraction},
          {"duration", duration},
          {"sample_rate", sample_rate},
          {"noise_level", noise_level},
          {"bg_gain", {bg_gain_min, bg_gain_max}},
          {"n_noise_files", n_noise_files},
          {"noise_duration", noise_duration},
          {"seed", seed}};
}

std::filesystem::path CorpusPaths::manifest(Split split, bool incomplete) const {
  return dir / (std::string(to_string(split)) + (incomplete ? "_incomplete.csv" : ".csv"));
}

CorpusSummary make_corpus(const CorpusConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(out_dir / "audio");
  fs::create_directories(out_dir / "noise");

  const auto species = make_species(cfg.n_classes, cfg.seed);
  std::vector<std::string> names;
  for (const auto& s : species) names.push_back(s.name);
  const LabelVocabulary vocab(names);

  CorpusSummary summary;
  summary.paths.dir = out_dir;
  summary.paths.classes = out_dir / "classes.txt";
  summary.paths.noise_list = out_dir / "noise.csv";

  const int n_train = static_cast<int>(std::floor(cfg.train_ratio * cfg.per_class + 0.5));
  const int n_val = std::min(cfg.per_class - n_train, static_cast<int>(std::floor(cfg.val_ratio * cfg.per_class + 0.5)));
  const auto split_of = [&](int i) {
    if (i < n_train) return Split::kTrain;
    if (i < n_train + n_val) return Split::kVal;
    return Split::kTest;
  };

  // Background assignment, stratified per (class, split).
  std::vector<int> has_bg(static_cast<std::size_t>(cfg.n_classes * cfg.per_class), 0);
  for (int c = 0; c < cfg.n_classes; ++c) {
    for (int s = 0; s < 3; ++s) {
      std::vector<int> group;
      for (int i = 0; i < cfg.per_class; ++i) {
        if (static_cast<int>(split_of(i)) == s) group.push_back(c * cfg.per_class + i);
      }
      Rng rng = derive_rng(cfg.seed, {3, static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(s)});
      std::shuffle(group.begin(), group.end(), rng);
      const auto take = static_cast<std::size_t>(std::floor(cfg.bg_rate * static_cast<double>(group.size()) + 0.5));
      for (std::size_t k = 0; k < take && k < group.size(); ++k) has_bg[static_cast<std::size_t>(group[k])] = 1;
    }
  }

  for (int c = 0; c < cfg.n_classes; ++c) {
    for (int i = 0; i < cfg.per_class; ++i) {
      const int f = c * cfg.per_class + i;
      SceneSpec spec;
      spec.duration = cfg.duration;
      spec.sample_rate = cfg.sample_rate;
      spec.foreground = static_cast<std::size_t>(c);
      spec.noise_level = cfg.noise_level;
      spec.seed = splitmix64(cfg.seed ^ splitmix64(0x5CE7E000ull + static_cast<std::uint64_t>(f)));
      if (has_bg[static_cast<std::size_t>(f)]) {
        Rng rng = derive_rng(cfg.seed, {2, static_cast<std::uint64_t>(f)});
        const double u = uniform01(rng);
        int count = u < 0.5 ? 1 : (u < 0.8 ? 2 : 3);
        count = std::min(count, cfg.n_classes - 1);
        std::vector<std::size_t> others;
        for (int o = 0; o < cfg.n_classes; ++o) {
          if (o != c) others.push_back(static_cast<std::size_t>(o));
        }
        std::shuffle(others.begin(), others.end(), rng);
        for (int k = 0; k < count; ++k) {
          spec.background.emplace_back(others[static_cast<std::size_t>(k)],
                                       uniform(rng, cfg.bg_gain_min, cfg.bg_gain_max));
        }
      }
      Scene scene = render_scene(spec, species, vocab);
      char file[64];
      std::snprintf(file, sizeof file, "audio/%s_%03d.wav", species[static_cast<std::size_t>(c)].name.c_str(), i);
      encode_wav(out_dir / file, scene.clip, WavEncoding::kPcm16);
      scene.rec.clip_ref = file;
      scene.rec.split = split_of(i);
      summary.complete.push_back(std::move(scene.rec));
    }
  }

  // Incomplete variant: delete floor(fraction * S) of all secondary entries.
  std::vector<std::pair<std::size_t, ClassId>> entries;
  for (std::size_t r = 0; r < summary.complete.size(); ++r) {
    for (ClassId l : summary.complete[r].secondary_labels) entries.emplace_back(r, l);
  }
  summary.secondary_entries = entries.size();
  summary.deleted_entries =
      static_cast<std::size_t>(std::floor(cfg.incomplete_fraction * static_cast<double>(entries.size())));
  Rng drop_rng = derive_rng(cfg.seed, {4});
  std::shuffle(entries.begin(), entries.end(), drop_rng);
  summary.incomplete = summary.complete;
  for (std::size_t k = 0; k < summary.deleted_entries; ++k) {
    auto& labels = summary.incomplete[entries[k].first].secondary_labels;
    labels.erase(std::find(labels.begin(), labels.end(), entries[k].second));
  }

  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    std::vector<Recording> full, partial;
    for (std::size_t r = 0; r < summary.complete.size(); ++r) {
      if (summary.complete[r].split != s) continue;
      full.push_back(summary.complete[r]);
      partial.push_back(summary.incomplete[r]);
    }
    save_manifest(summary.paths.manifest(s), full, vocab);
    save_manifest(summary.paths.manifest(s, true), partial, vocab);
  }

  std::ofstream noise_list(summary.paths.noise_list, std::ios::trunc);
  noise_list << "filepath\n";
  for (int j = 0; j < cfg.n_noise_files; ++j) {
    AudioClip clip;
    clip.sample_rate = cfg.sample_rate;
    const auto n = static_cast<std::size_t>(std::llround(cfg.noise_duration * cfg.sample_rate));
    clip.samples = pink_noise(n, 0.1, splitmix64(cfg.seed ^ (0x4015E00ull + static_cast<std::uint64_t>(j))));
    char file[64];
    std::snprintf(file, sizeof file, "noise/noise_%02d.wav", j);
    encode_wav(out_dir / file, clip, WavEncoding::kPcm16);
    noise_list << file << "\n";
  }
  noise_list.close();

  vocab.save(summary.paths.classes);
  nlohmann::json meta{{"config", cfg.to_json()}, {"species", nlohmann::json::array()}};
  for (const auto& s : species) meta["species"].push_back(s.to_json());
  std::ofstream(out_dir / "species.json", std::ios::trunc) << meta.dump(2) << "\n";
  return summary;
}

}  // namespace birdtl
