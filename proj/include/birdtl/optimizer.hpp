#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace birdtl {

// Mini-batch SGD with heavy-ball momentum and cosine learning-rate decay:
// v <- mu v + g;  p <- p - lr_t v;  lr_t = lr/2 (1 + cos(pi t / T)).
// Frozen entries are never touched.
class SgdMomentum {
 public:
  SgdMomentum(std::size_t n_params, double lr, double momentum, std::size_t total_steps);

  void step(std::span<float> params, std::span<const float> grad, const std::vector<std::uint8_t>& frozen);
  double current_lr() const;
  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<float> velocity_;
  double lr_;
  double momentum_;
  std::size_t total_;
  std::size_t t_ = 0;
};

}  // namespace birdtl
