#include "birdtl/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "birdtl/error.hpp"

namespace birdtl {

SgdMomentum::SgdMomentum(std::size_t n_params, double lr, double momentum, std::size_t total_steps)
    : velocity_(n_params, 0.0f), lr_(lr), momentum_(momentum), total_(total_steps == 0 ? 1 : total_steps) {
  if (!(lr > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("optimizer: momentum must be in [0,1)");
}

double SgdMomentum::current_lr() const {
  const double progress = std::min(1.0, static_cast<double>(t_) / static_cast<double>(total_));
  return 0.5 * lr_ * (1.0 + std::cos(std::numbers::pi * progress));
}

void SgdMomentum::step(std::span<float> params, std::span<const float> grad, const std::vector<std::uint8_t>& frozen) {
  if (params.size() != velocity_.size() || grad.size() != velocity_.size() || frozen.size() != velocity_.size()) {
    throw ShapeError("optimizer: parameter, gradient and mask sizes differ");
  }
  const auto lr = static_cast<float>(current_lr());
  const auto mu = static_cast<float>(momentum_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (frozen[i]) continue;
    velocity_[i] = mu * velocity_[i] + grad[i];
    params[i] -= lr * velocity_[i];
  }
  ++t_;
}

}  // namespace birdtl
