#include "antlab/adam.hpp"

#include <cmath>

#include "antlab/common.hpp"

namespace antlab {

Adam::Adam(std::size_t size, AdamConfig config) : config_(config), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> grad, double lr) {
  require(params.size() == m_.size() && grad.size() == m_.size(), "adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * grad[i];
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
    params[i] -= lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + config_.eps);
  }
}

MaskedAdam::MaskedAdam(std::span<const std::uint8_t> mask, AdamConfig config)
    : config_(config), size_(mask.size()) {
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) index_.push_back(i);
  }
  m_.assign(index_.size(), 0.0);
  v_.assign(index_.size(), 0.0);
}

void MaskedAdam::step(std::span<double> params, std::span<const double> grad, double lr) {
  require(params.size() == size_ && grad.size() == size_, "masked adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t j = 0; j < index_.size(); ++j) {
    const std::size_t i = index_[j];
    m_[j] = config_.beta1 * m_[j] + (1.0 - config_.beta1) * grad[i];
    v_[j] = config_.beta2 * v_[j] + (1.0 - config_.beta2) * grad[i] * grad[i];
    params[i] -= lr * (m_[j] / c1) / (std::sqrt(v_[j] / c2) + config_.eps);
  }
}

}  // namespace antlab
