#include "antlab/pretrainer.hpp"

#include <cmath>

#include "antlab/csv.hpp"

namespace antlab {

void PretrainConfig::validate() const {
  require(steps >= 0, "pretrain: steps must be >= 0");
  require(batch >= 1, "pretrain: batch must be >= 1");
  require(lr > 0.0, "pretrain: lr must be positive");
  require(cond_dropout >= 0.0 && cond_dropout < 1.0, "pretrain: cond_dropout must lie in [0, 1)");
  require(log_every >= 1, "pretrain: log_every must be >= 1");
}

std::vector<TrainSample> make_dsm_batch(const NoiseSchedule& schedule, const Dataset& data, int batch,
                                        double cond_dropout, Rng& rng) {
  const int n_points = static_cast<int>(data.points.size());
  std::vector<TrainSample> out(batch);
  for (auto& s : out) {
    const LabeledPoint& p = data.points[rng.uniform_int(0, n_points - 1)];
    const int t = rng.uniform_int(1, schedule.T());
    const Vec2 eps = rng.normal2();
    const bool drop = rng.uniform() < cond_dropout;
    s.z = forward_noise(schedule, p.x, t, eps);
    s.t_norm = static_cast<double>(t) / schedule.T();
    s.cond = drop ? Cond::null() : Cond::of(p.concept_id, p.context_id);
    s.target = eps;
  }
  return out;
}

PretrainResult pretrain(const NetConfig& net, const NoiseSchedule& schedule, const Dataset& data,
                        const PretrainConfig& config) {
  config.validate();
  net.validate();
  require(!data.points.empty(), "pretrain: dataset is empty");
  require(data.spec.n_concepts == net.n_concepts && data.spec.n_contexts == net.n_contexts,
          "pretrain: dataset vocabularies do not match the network config");

  PretrainResult result{ModelParams::initialize(net, derive_seed(config.seed, "init")), {}};
  Adam adam(result.params.size(), config.adam);
  Rng rng(derive_seed(config.seed, "pretrain-batches"));

  double window_sum = 0.0;
  int window_count = 0;
  for (int step = 0; step < config.steps; ++step) {
    const auto batch = make_dsm_batch(schedule, data, config.batch, config.cond_dropout, rng);
    auto lg = backward(result.params, batch);
    if (!std::isfinite(lg.loss)) {
      throw TrainingDiverged("pretrain diverged at step " + std::to_string(step), result.params, step);
    }
    adam.step(result.params.mutable_flat(), lg.grad, config.lr);
    window_sum += lg.loss;
    if (++window_count == config.log_every || step + 1 == config.steps) {
      result.loss_curve.push_back({step + 1, window_sum / window_count});
      window_sum = 0.0;
      window_count = 0;
    }
  }
  return result;
}

void write_loss_csv(const std::vector<LossPoint>& curve, const std::filesystem::path& path) {
  std::string s = "step,loss\n";
  for (const auto& p : curve) s += std::to_string(p.step) + ',' + format_double(p.loss) + '\n';
  write_file_atomic(path, s);
}

}  // namespace antlab
