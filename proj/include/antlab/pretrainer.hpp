#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "antlab/adam.hpp"
#include "antlab/diffusion.hpp"
#include "antlab/score_net.hpp"
#include "antlab/synth_data.hpp"

namespace antlab {

struct PretrainConfig {
  int steps = 20000;
  int batch = 256;
  double lr = 1e-3;
  double cond_dropout = 0.1;
  std::uint64_t seed = 0;
  AdamConfig adam;
  int log_every = 100;

  void validate() const;
};

struct LossPoint {
  int step = 0;
  double loss = 0.0;
};

struct PretrainResult {
  ModelParams params;
  // Mean training loss over each window of `log_every` steps; `step` is the
  // number of completed steps at the end of the window.
  std::vector<LossPoint> loss_curve;
};

// Thrown when the loss turns non-finite; carries the last finite parameters.
class TrainingDiverged : public RuntimeFailure {
 public:
  TrainingDiverged(const std::string& what, ModelParams last_good, int step)
      : RuntimeFailure(what), last_good(std::move(last_good)), step(step) {}
  ModelParams last_good;
  int step;
};

// Denoising score matching: minimizes E ||eps - eps_theta(z_t, t, c)||^2 with t
// uniform on 1..T and c replaced by the null condition with probability
// cond_dropout.
PretrainResult pretrain(const NetConfig& net, const NoiseSchedule& schedule, const Dataset& data,
                        const PretrainConfig& config);

// Same objective on an explicit set of points, for tests and finite-difference
// checks: returns the DSM batch built from `rng`.
std::vector<TrainSample> make_dsm_batch(const NoiseSchedule& schedule, const Dataset& data, int batch,
                                        double cond_dropout, Rng& rng);

void write_loss_csv(const std::vector<LossPoint>& curve, const std::filesystem::path& path);

}  // namespace antlab
