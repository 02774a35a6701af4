#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace antlab {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a dense vector.
class Adam {
 public:
  Adam(std::size_t size, AdamConfig config = {});
  void step(std::span<double> params, std::span<const double> grad, double lr);
  std::int64_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

// Adam restricted to the coordinates where mask[i] != 0. Moment state exists
// only for those coordinates; all others are never written.
class MaskedAdam {
 public:
  MaskedAdam(std::span<const std::uint8_t> mask, AdamConfig config = {});
  void step(std::span<double> params, std::span<const double> grad, double lr);
  std::size_t active() const { return index_.size(); }
  std::size_t size() const { return size_; }

 private:
  AdamConfig config_;
  std::size_t size_;
  std::vector<std::size_t> index_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace antlab
