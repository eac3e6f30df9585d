#include "birdtl/dataset.hpp"

#include <algorithm>

#include "birdtl/audio.hpp"
#include "birdtl/error.hpp"
#include "birdtl/rng.hpp"

namespace birdtl {

std::vector<LoadedRecording> load_recordings(const Manifest& manifest, std::span<const Recording> recordings,
                                             const MelConfig& cfg, double stride, bool with_energy_stats) {
  std::vector<LoadedRecording> out;
  out.reserve(recordings.size());
  for (const auto& rec : recordings) {
    AudioClip clip = decode_wav(manifest.resolve(rec));
    if (clip.sample_rate != cfg.sample_rate) clip = resample(clip, cfg.sample_rate);
    if (clip.samples.empty()) throw DecodeError(manifest.resolve(rec).string() + ": no samples");
    LoadedRecording lr;
    lr.rec = rec;
    lr.chunks = chunk(clip, stride, rec.clip_ref);
    if (with_energy_stats) lr.energy = recording_energy_stats(clip, cfg);
    out.push_back(std::move(lr));
  }
  return out;
}

std::vector<AudioClip> load_noise_bank(const std::filesystem::path& list, int sample_rate) {
  std::vector<AudioClip> bank;
  for (const auto& p : load_path_list(list)) {
    AudioClip c = decode_wav(p);
    if (c.sample_rate != sample_rate) c = resample(c, sample_rate);
    bank.push_back(std::move(c));
  }
  return bank;
}

LabelVector make_targets(const Recording& rec, std::size_t n_classes, LabelMode mode, bool use_secondary) {
  LabelVector y(n_classes, 0.0);
  y.at(static_cast<std::size_t>(rec.primary_label)) = 1.0;
  if (mode == LabelMode::kMultiLabel && use_secondary) {
    for (ClassId s : rec.secondary_labels) y.at(static_cast<std::size_t>(s)) = 1.0;
  }
  return y;
}

std::string_view to_string(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::kNone: return "none";
    case DetectorKind::kEnergy: return "energy";
    case DetectorKind::kExternal: return "external";
  }
  return "none";
}

DetectorKind parse_detector_kind(std::string_view text) {
  if (text == "none") return DetectorKind::kNone;
  if (text == "energy") return DetectorKind::kEnergy;
  if (text == "external") return DetectorKind::kExternal;
  throw ConfigError("unknown detector '" + std::string(text) + "'");
}

TrainingSet build_training_set(const std::vector<LoadedRecording>& recordings, std::size_t n_classes,
                               LabelMode mode, bool use_secondary, const MelConfig& cfg,
                               const DetectorSettings& detector) {
  TrainingSet set;
  set.sample_rate = cfg.sample_rate;
  set.n_classes = n_classes;
  std::map<std::string, double> external;
  if (detector.kind == DetectorKind::kExternal) external = load_detector_scores(detector.score_file);

  for (std::size_t r = 0; r < recordings.size(); ++r) {
    const auto& lr = recordings[r];
    const LabelVector target = make_targets(lr.rec, n_classes, mode, use_secondary);
    std::vector<double> scores(lr.chunks.size(), 1.0);
    std::vector<bool> keep(lr.chunks.size(), true);
    if (detector.kind == DetectorKind::kEnergy) {
      if (!lr.energy) throw ConfigError("energy detector requires recording statistics");
      for (std::size_t c = 0; c < lr.chunks.size(); ++c) {
        const auto d = energy_detector(lr.chunks[c], *lr.energy, cfg, detector.k);
        scores[c] = d.score;
        keep[c] = d.keep;
      }
    } else if (detector.kind == DetectorKind::kExternal) {
      for (std::size_t c = 0; c < lr.chunks.size(); ++c) {
        const auto it = external.find(lr.chunks[c].id());
        if (it == external.end()) throw ConfigError("detector score file has no entry for " + lr.chunks[c].id());
        scores[c] = it->second;
        keep[c] = it->second >= detector.threshold;
      }
    }
    if (std::none_of(keep.begin(), keep.end(), [](bool k) { return k; })) {
      keep[static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin())] = true;
    }
    for (std::size_t c = 0; c < lr.chunks.size(); ++c) {
      if (!keep[c]) {
        ++set.filtered_out;
        continue;
      }
      TrainChunk tc;
      tc.recording = r;
      tc.chunk_index = c;
      tc.samples = lr.chunks[c].samples.samples;
      tc.target = target;
      tc.key = splitmix64((static_cast<std::uint64_t>(r) << 20) ^ c);
      set.chunks.push_back(std::move(tc));
    }
  }
  return set;
}

EvalSet build_eval_set(const std::vector<LoadedRecording>& recordings, const MelConfig& cfg) {
  EvalSet set;
  for (const auto& lr : recordings) {
    set.recordings.push_back(lr.rec);
    std::vector<std::vector<float>> chunks;
    for (const auto& c : lr.chunks) chunks.push_back(mel_spectrogram(c.samples, cfg).values);
    set.inputs.push_back(std::move(chunks));
  }
  return set;
}

ScoreMatrix score_eval_set(const Network& net, const EvalSet& set, const LabelVocabulary& vocab) {
  if (static_cast<std::size_t>(net.spec().n_classes) != vocab.size()) {
    throw ConfigError("network has " + std::to_string(net.spec().n_classes) + " classes but vocabulary has " +
                      std::to_string(vocab.size()));
  }
  ScoreMatrix scores(set.recordings.size(), vocab.size());
  scores.class_names = vocab.names();
  for (std::size_t r = 0; r < set.recordings.size(); ++r) {
    scores.row_ids.push_back(set.recordings[r].clip_ref);
    const auto pooled = pool_recording(activate(net.infer(set.inputs[r]), net.spec().activation));
    for (std::size_t c = 0; c < pooled.size(); ++c) scores(r, c) = pooled[c];
  }
  return scores;
}

}  // namespace birdtl
