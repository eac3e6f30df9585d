#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "birdtl/augment.hpp"
#include "birdtl/dataset.hpp"
#include "birdtl/losses.hpp"
#include "birdtl/network.hpp"

namespace birdtl {

enum class Strategy { kShallowFt, kDeepFt, kDistill };

std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view text);

struct TrainConfig {
  Strategy strategy = Strategy::kDeepFt;
  LabelMode mode = LabelMode::kSingleLabel;
  bool use_secondary_labels = false;
  int epochs = 10;
  int batch_size = 16;
  std::uint64_t seed = 0;
  AugmentConfig augment;
  double lr = 0.0;  // <= 0: 1e-2 for shallow_ft (head only), 1e-3 otherwise
  double momentum = 0.9;
  DistillConfig distill;

  double effective_lr() const;
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_f1 = 0.0;
  double val_map = 0.0;
  double val_auroc = 0.0;
  double seconds = 0.0;  // wall-clock of the optimization pass (validation excluded)
};

struct TrainResult {
  Network network;  // best validation mAP (earliest on ties)
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double final_train_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// shallow_ft freezes the backbone and trains the head; deep_ft trains every
// parameter; distill trains `net` against the frozen `teacher` on the exact
// same (augmented) inputs.
TrainResult run_training(const TrainingSet& train, const EvalSet& val, const Network& net, const Network* teacher,
                         const TrainConfig& cfg, const MelConfig& mel, std::span<const AudioClip> noise_bank,
                         const LabelVocabulary& vocab, const EpochCallback& on_epoch = {});

// epoch,train_loss,val_f1,val_map,val_auroc,seconds
void save_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);
std::vector<EpochRecord> load_history_csv(const std::filesystem::path& path);

}  // namespace birdtl
