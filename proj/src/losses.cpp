#include "birdtl/losses.hpp"

#include <cmath>

#include "birdtl/error.hpp"

namespace birdtl {
namespace {

const double kLogMin = std::log(kLogClamp);

void check_targets(const Logits& scores, const std::vector<LabelVector>& targets, LabelMode mode) {
  if (targets.size() != scores.rows) throw ShapeError("loss: batch size differs between scores and targets");
  for (std::size_t b = 0; b < targets.size(); ++b) {
    if (targets[b].size() != scores.cols) throw ShapeError("loss: target width differs from class count");
    double sum = 0.0;
    for (double y : targets[b]) {
      if (!(y >= 0.0 && y <= 1.0)) throw ShapeError("loss: target entries must lie in [0,1]");
      sum += y;
    }
    if (mode == LabelMode::kSingleLabel && std::abs(sum - 1.0) > 1e-6) {
      throw ShapeError("loss: single-label targets must sum to 1 (row " + std::to_string(b) + ")");
    }
  }
}

double clamped_log(double p) { return p >= kLogClamp || std::isnan(p) ? std::log(p) : kLogMin; }

// BCE of sigmoid(z) against soft targets and its gradient w.r.t. z.
double bce_value(const Logits& scores, const std::vector<LabelVector>& y) {
  double acc = 0.0;
  for (std::size_t b = 0; b < scores.rows; ++b) {
    for (std::size_t c = 0; c < scores.cols; ++c) {
      const double s = scores(b, c);
      acc -= y[b][c] * clamped_log(s) + (1.0 - y[b][c]) * clamped_log(1.0 - s);
    }
  }
  return acc / static_cast<double>(scores.rows * scores.cols);
}

Logits bce_grad(const Logits& scores, const std::vector<LabelVector>& y, double chain) {
  Logits g(scores.rows, scores.cols);
  const double inv = chain / static_cast<double>(scores.rows * scores.cols);
  for (std::size_t b = 0; b < scores.rows; ++b) {
    for (std::size_t c = 0; c < scores.cols; ++c) {
      const double s = scores(b, c);
      double d = 0.0;
      if (s >= kLogClamp) d -= y[b][c] * (1.0 - s);
      if (1.0 - s >= kLogClamp) d += (1.0 - y[b][c]) * s;
      g(b, c) = d * inv;
    }
  }
  return g;
}

Logits scaled(const Logits& z, double tau) {
  Logits out = z;
  for (double& v : out.values) v /= tau;
  return out;
}

struct KdTerm {
  double value;
  Logits grad;
};

KdTerm kd_term(const Logits& student, const Logits& teacher, const DistillConfig& cfg) {
  const double student_tau = cfg.symmetric_temperature ? cfg.tau : 1.0;
  const Logits s = student_tau == 1.0 ? student : scaled(student, student_tau);
  const Logits t = scaled(teacher, cfg.tau);
  if (cfg.mode == LabelMode::kMultiLabel) {
    const Logits ss = activate(s, Activation::kSigmoid);
    const Logits ts = activate(t, Activation::kSigmoid);
    std::vector<LabelVector> soft(ts.rows);
    for (std::size_t b = 0; b < ts.rows; ++b) soft[b].assign(ts.row(b).begin(), ts.row(b).end());
    return {bce_value(ss, soft), bce_grad(ss, soft, 1.0 / student_tau)};
  }
  const std::size_t B = s.rows, C = s.cols;
  const Logits q = activate(t, Activation::kSoftmax);
  const Logits p = activate(s, Activation::kSoftmax);
  Logits grad(B, C);
  double acc = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, s(b, c));
    double lse = 0.0;
    for (std::size_t c = 0; c < C; ++c) lse += std::exp(s(b, c) - mx);
    lse = mx + std::log(lse);
    double tmx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) tmx = std::max(tmx, t(b, c));
    double tlse = 0.0;
    for (std::size_t c = 0; c < C; ++c) tlse += std::exp(t(b, c) - tmx);
    tlse = tmx + std::log(tlse);
    for (std::size_t c = 0; c < C; ++c) {
      if (q(b, c) > 0.0) acc += q(b, c) * ((t(b, c) - tlse) - (s(b, c) - lse));
      grad(b, c) = (p(b, c) - q(b, c)) / (static_cast<double>(B) * student_tau);
    }
  }
  return {acc / static_cast<double>(B), std::move(grad)};
}

}  // namespace

std::string_view to_string(LabelMode mode) {
  return mode == LabelMode::kSingleLabel ? "single_label" : "multi_label";
}

LabelMode parse_label_mode(std::string_view text) {
  if (text == "single_label") return LabelMode::kSingleLabel;
  if (text == "multi_label") return LabelMode::kMultiLabel;
  throw ConfigError("unknown label mode '" + std::string(text) + "'");
}

double loss_ground_truth(const Logits& scores, const std::vector<LabelVector>& targets, LabelMode mode) {
  check_targets(scores, targets, mode);
  if (scores.rows == 0) throw ShapeError("loss: empty batch");
  if (mode == LabelMode::kMultiLabel) return bce_value(scores, targets);
  double acc = 0.0;
  for (std::size_t b = 0; b < scores.rows; ++b) {
    for (std::size_t c = 0; c < scores.cols; ++c) {
      if (targets[b][c] != 0.0) acc -= targets[b][c] * clamped_log(scores(b, c));
    }
  }
  return acc / static_cast<double>(scores.rows);
}

LossValue ground_truth_loss(const Logits& logits, const std::vector<LabelVector>& targets, LabelMode mode) {
  const Logits scores = activate(logits, activation_for(mode));
  LossValue out;
  out.value = loss_ground_truth(scores, targets, mode);
  if (mode == LabelMode::kMultiLabel) {
    out.grad = bce_grad(scores, targets, 1.0);
    return out;
  }
  out.grad = Logits(scores.rows, scores.cols);
  const double inv = 1.0 / static_cast<double>(scores.rows);
  for (std::size_t b = 0; b < scores.rows; ++b) {
    double active_mass = 0.0;
    for (std::size_t c = 0; c < scores.cols; ++c) {
      if (scores(b, c) >= kLogClamp) active_mass += targets[b][c];
    }
    for (std::size_t c = 0; c < scores.cols; ++c) {
      const double own = scores(b, c) >= kLogClamp ? targets[b][c] : 0.0;
      out.grad(b, c) = (scores(b, c) * active_mass - own) * inv;
    }
  }
  return out;
}

void DistillConfig::validate() const {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("distill: lambda must be in [0,1]");
  if (!(tau > 0.0)) throw ConfigError("distill: tau must be positive");
}

LossValue distill_loss(const Logits& student_logits, const Logits& teacher_logits,
                       const std::vector<LabelVector>& targets, const DistillConfig& cfg) {
  cfg.validate();
  if (student_logits.rows != teacher_logits.rows || student_logits.cols != teacher_logits.cols) {
    throw ShapeError("distill: student and teacher logits differ in shape");
  }
  LossValue gt = ground_truth_loss(student_logits, targets, cfg.mode);
  KdTerm kd = kd_term(student_logits, teacher_logits, cfg);
  LossValue out;
  out.value = cfg.lambda * gt.value + (1.0 - cfg.lambda) * kd.value;
  out.grad = Logits(student_logits.rows, student_logits.cols);
  for (std::size_t i = 0; i < out.grad.values.size(); ++i) {
    out.grad.values[i] = cfg.lambda * gt.grad.values[i] + (1.0 - cfg.lambda) * kd.grad.values[i];
  }
  return out;
}

double loss_distill(const Logits& student_logits, const Logits& teacher_logits,
                    const std::vector<LabelVector>& targets, const DistillConfig& cfg) {
  return distill_loss(student_logits, teacher_logits, targets, cfg).value;
}

}  // namespace birdtl
