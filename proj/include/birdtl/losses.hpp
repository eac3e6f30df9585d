#pragma once

#include <vector>

#include "birdtl/augment.hpp"
#include "birdtl/network.hpp"

namespace birdtl {

enum class LabelMode { kSingleLabel, kMultiLabel };

std::string_view to_string(LabelMode mode);
LabelMode parse_label_mode(std::string_view text);
inline Activation activation_for(LabelMode mode) {
  return mode == LabelMode::kSingleLabel ? Activation::kSoftmax : Activation::kSigmoid;
}

inline constexpr double kLogClamp = 1e-12;

// Mean over the batch of -sum_c y log(score) (single-label, softmax scores) or
// mean over batch and classes of BCE (multi-label, sigmoid scores). Log
// arguments are clamped at 1e-12.
double loss_ground_truth(const Logits& scores, const std::vector<LabelVector>& targets, LabelMode mode);

struct LossValue {
  double value = 0.0;
  Logits grad;  // dLoss / d(student logits)
};

LossValue ground_truth_loss(const Logits& logits, const std::vector<LabelVector>& targets, LabelMode mode);

struct DistillConfig {
  double lambda = 0.5;
  double tau = 1.0;
  LabelMode mode = LabelMode::kSingleLabel;
  // Off: temperature divides the teacher logits only. On: student logits too.
  bool symmetric_temperature = false;

  void validate() const;
};

// lambda * L_g(student, y) + (1 - lambda) * L_kd(student, teacher / tau).
// Single-label L_kd is KL(teacher || student) over softmax distributions;
// multi-label L_kd is BCE of student sigmoid scores against teacher sigmoid targets.
double loss_distill(const Logits& student_logits, const Logits& teacher_logits,
                    const std::vector<LabelVector>& targets, const DistillConfig& cfg);
LossValue distill_loss(const Logits& student_logits, const Logits& teacher_logits,
                       const std::vector<LabelVector>& targets, const DistillConfig& cfg);

}  // namespace birdtl
