#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "antlab/common.hpp"
#include "antlab/diffusion.hpp"
#include "antlab/score_net.hpp"

namespace testing {

inline antlab::NetConfig small_net() {
  antlab::NetConfig c;
  c.hidden_width = 16;
  c.n_hidden_layers = 2;
  c.time_embed_dim = 8;
  c.cond_embed_dim = 4;
  c.n_concepts = 4;
  c.n_contexts = 3;
  return c;
}

inline antlab::NoiseSchedule default_schedule() { return antlab::NoiseSchedule::linear(100, 1e-3, 0.2); }

// Random init leaves the zero-initialized pieces at zero; jiggle every
// coordinate so no gradient path is trivially dead.
inline antlab::ModelParams jiggled(const antlab::NetConfig& net, std::uint64_t seed) {
  auto p = antlab::ModelParams::initialize(net, seed);
  antlab::Rng rng(seed ^ 0x5eed);
  for (auto& v : p.mutable_flat()) v += 0.1 * rng.normal();
  return p;
}

struct FdReport {
  double max_rel = 0.0;
  int checked = 0;
};

// Central differences on `n` coordinates drawn at random from those whose
// analytic gradient is at least 1e-4 of the largest one (the rest are below
// the difference quotient's rounding floor).
inline FdReport fd_check(std::vector<double>& x, const std::vector<double>& grad,
                         const std::function<double()>& loss, int n, std::uint64_t seed, double h = 1e-5) {
  double gmax = 0.0;
  for (double g : grad) gmax = std::max(gmax, std::abs(g));
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (std::abs(grad[i]) >= 1e-4 * gmax) live.push_back(i);
  }
  antlab::Rng rng(seed);
  FdReport rep;
  for (int k = 0; k < n && !live.empty(); ++k) {
    const std::size_t i = live[rng.uniform_int(0, static_cast<int>(live.size()) - 1)];
    const double x0 = x[i];
    x[i] = x0 + h;
    const double lp = loss();
    x[i] = x0 - h;
    const double lm = loss();
    x[i] = x0;
    const double fd = (lp - lm) / (2 * h);
    const double rel = std::abs(fd - grad[i]) / std::max(std::abs(fd), std::abs(grad[i]));
    rep.max_rel = std::max(rep.max_rel, rel);
    ++rep.checked;
  }
  return rep;
}

}  // namespace testing
