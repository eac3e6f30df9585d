#include "birdtl/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "birdtl/error.hpp"
#include "birdtl/optimizer.hpp"
#include "birdtl/rng.hpp"

namespace birdtl {
namespace {

struct ValScores {
  double f1 = 0, map = 0, auroc = 0;
};

ValScores validate_epoch(const Network& net, const EvalSet& val, const LabelVocabulary& vocab, LabelMode mode) {
  ValScores v;
  if (val.recordings.empty()) return v;
  const ScoreMatrix scores = score_eval_set(net, val, vocab);
  std::vector<ClassId> primary;
  for (const auto& r : val.recordings) primary.push_back(r.primary_label);
  v.f1 = f1_single_label(scores, primary);
  const auto truth = truth_matrix(val.recordings, vocab.size(), mode == LabelMode::kMultiLabel);
  const auto per_class = per_class_metrics(scores, truth);
  v.map = mean_average_precision(per_class);
  v.auroc = macro_auroc(per_class);
  return v;
}

void require_identical_inputs(const std::vector<std::vector<float>>& a, const std::vector<std::vector<float>>& b) {
  bool same = a.size() == b.size();
  for (std::size_t i = 0; same && i < a.size(); ++i) {
    same = a[i].size() == b[i].size() && std::memcmp(a[i].data(), b[i].data(), a[i].size() * sizeof(float)) == 0;
  }
  if (!same) throw Error("consistent teaching violated: teacher and student inputs differ");
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kShallowFt: return "shallow_ft";
    case Strategy::kDeepFt: return "deep_ft";
    case Strategy::kDistill: return "distill";
  }
  return "deep_ft";
}

Strategy parse_strategy(std::string_view text) {
  if (text == "shallow_ft") return Strategy::kShallowFt;
  if (text == "deep_ft") return Strategy::kDeepFt;
  if (text == "distill") return Strategy::kDistill;
  throw ConfigError("unknown strategy '" + std::string(text) + "'");
}

double TrainConfig::effective_lr() const {
  if (lr > 0.0) return lr;
  return strategy == Strategy::kShallowFt ? 1e-2 : 1e-3;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  augment.validate();
  if (strategy == Strategy::kDistill) {
    distill.validate();
    if (distill.mode != mode) throw ConfigError("train: distill mode must match the label mode");
  }
}

TrainResult run_training(const TrainingSet& train, const EvalSet& val, const Network& net, const Network* teacher,
                         const TrainConfig& cfg, const MelConfig& mel, std::span<const AudioClip> noise_bank,
                         const LabelVocabulary& vocab, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.chunks.empty()) throw ConfigError("training set is empty");
  if (train.sample_rate != mel.sample_rate) throw ConfigError("training set rate differs from the mel config");
  if (static_cast<std::size_t>(net.spec().n_classes) != vocab.size()) {
    throw ConfigError("network class count does not match the vocabulary");
  }
  if (net.spec().activation != activation_for(cfg.mode)) {
    throw ConfigError("network activation does not match the label mode");
  }
  if (cfg.strategy == Strategy::kDistill) {
    if (!teacher) throw ConfigError("distillation requires a teacher network");
    if (teacher->spec().n_classes != net.spec().n_classes) {
      throw ConfigError("teacher and student class counts differ");
    }
  }

  Network student = freeze(net, cfg.strategy == Strategy::kShallowFt ? FreezeSelector::kBackbone
                                                                      : FreezeSelector::kNone);
  const std::size_t n = train.chunks.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t batches = (n + bs - 1) / bs;
  SgdMomentum opt(student.params().size(), cfg.effective_lr(), cfg.momentum,
                  batches * static_cast<std::size_t>(cfg.epochs));

  AugmentConfig aug = cfg.augment;
  aug.seed = splitmix64(cfg.seed ^ splitmix64(cfg.augment.seed + 0xA5A5));
  const bool augmenting = aug.mixup_prob > 0.0 || (aug.noise_prob > 0.0 && !noise_bank.empty());

  // With a frozen backbone and fixed inputs the embeddings never change.
  const bool cache_embeddings = cfg.strategy == Strategy::kShallowFt && !augmenting;
  std::vector<std::vector<float>> embeddings;

  TrainResult result{student, {}, 0, 0.0};
  double best_map = -1.0;
  std::vector<std::size_t> order(n);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cache_embeddings && embeddings.empty()) {
      for (const auto& c : train.chunks) {
        embeddings.push_back(student.embed({mel_spectrogram(c.samples, mel).values}).front());
      }
    }
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = derive_rng(cfg.seed, {static_cast<std::uint64_t>(epoch), 0x5EED});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * bs, hi = std::min(n, lo + bs);
      std::vector<AugmentItem> items;
      std::vector<std::uint64_t> keys;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& c = train.chunks[order[i]];
        AugmentItem it;
        it.labels = c.target;
        if (!cache_embeddings) {
          it.clip.samples = c.samples;
          it.clip.sample_rate = train.sample_rate;
        }
        items.push_back(std::move(it));
        keys.push_back(c.key);
      }
      if (augmenting) items = apply(items, aug, noise_bank, static_cast<std::uint64_t>(epoch), keys);

      std::vector<std::vector<float>> inputs;
      std::vector<LabelVector> targets;
      for (std::size_t i = 0; i < items.size(); ++i) {
        inputs.push_back(cache_embeddings ? embeddings[order[lo + i]]
                                          : mel_spectrogram(items[i].clip.samples, mel).values);
        targets.push_back(std::move(items[i].labels));
      }

      ForwardResult fwd;
      if (cache_embeddings) {
        fwd = student.forward_head(inputs);
      } else if (cfg.strategy == Strategy::kShallowFt) {
        fwd = student.forward_head(student.embed(inputs));  // frozen backbone keeps no activations
      } else {
        fwd = student.forward(inputs);
      }
      LossValue loss;
      if (cfg.strategy == Strategy::kDistill) {
        const auto& teacher_inputs = inputs;
        require_identical_inputs(teacher_inputs, inputs);
        const Logits teacher_logits = teacher->infer(teacher_inputs);
        DistillConfig dc = cfg.distill;
        dc.mode = cfg.mode;
        loss = distill_loss(fwd.logits, teacher_logits, targets, dc);
      } else {
        loss = ground_truth_loss(fwd.logits, targets, cfg.mode);
      }
      if (!std::isfinite(loss.value)) {
        throw DivergenceError(epoch, static_cast<int>(b), "non-finite loss " + std::to_string(loss.value));
      }
      const auto grad = student.backward(fwd, loss.grad);
      opt.step(student.mutable_params(), grad, student.frozen_mask());
      loss_sum += loss.value * static_cast<double>(hi - lo);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const ValScores v = validate_epoch(student, val, vocab, cfg.mode);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(n), v.f1, v.map, v.auroc, seconds};
    result.history.push_back(rec);
    result.final_train_loss = rec.train_loss;
    if (val.recordings.empty() || v.map > best_map) {
      best_map = v.map;
      result.network = student;
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

void save_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,train_loss,val_f1,val_map,val_auroc,seconds\n";
  char buf[256];
  for (const auto& h : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.17g,%.6f\n", h.epoch, h.train_loss, h.val_f1, h.val_map,
                  h.val_auroc, h.seconds);
    out << buf;
  }
}

std::vector<EpochRecord> load_history_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    char comma;
    std::istringstream ss(line);
    ss >> r.epoch >> comma >> r.train_loss >> comma >> r.val_f1 >> comma >> r.val_map >> comma >> r.val_auroc >>
        comma >> r.seconds;
    if (!ss) throw ConfigError(path.string() + ": malformed history row");
    out.push_back(r);
  }
  return out;
}

}  // namespace birdtl
