#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "antlab/common.hpp"
#include "antlab/score_net.hpp"

namespace antlab {

class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  // Betas linear in t from beta_start (t = 1) to beta_end (t = T).
  static NoiseSchedule linear(int T, double beta_start, double beta_end);

  int T() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const;       // 1 <= t <= T
  double alpha_bar(int t) const;  // 0 <= t <= T, alpha_bar(0) = 1

  // Training timesteps of the inference ladder: entry i (0..n) is
  // floor(i T / n), so entry n is T and entry 0 is 0.
  std::vector<int> ladder(int n_infer_steps) const;

 private:
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;  // index 0..T
};

// Classifier-free guidance with reversal: t_prime is in ladder steps, t counts
// down n..1, and the condition direction is flipped while t <= t_prime.
struct GuidanceSpec {
  double scale = 3.0;
  int t_prime = 0;
  int n_infer_steps = 50;

  void validate(const NoiseSchedule& schedule) const;
};

// +1 when t > t_prime, -1 when t <= t_prime.
int sgn_schedule(int t, int t_prime);

// eps_uncond + s * sign * (eps_cond - eps_uncond)
Vec2 cfg_combine(const Vec2& eps_uncond, const Vec2& eps_cond, double s, int sign);

// z_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
Vec2 forward_noise(const NoiseSchedule& schedule, const Vec2& x0, int t, const Vec2& eps);

// Deterministic DDIM update from t to t_next using the predicted noise.
Vec2 ddim_step(const NoiseSchedule& schedule, const Vec2& z_t, int t, int t_next, const Vec2& eps_hat);
void ddim_step(const NoiseSchedule& schedule, Points& z, int t, int t_next, const Points& eps_hat);

// Noise predictor for the whole batch at a ladder position.
using NoisePredictor = std::function<Points(const Points& z, int t, int ladder_index)>;

struct SampleOutput {
  Points points;
  // trajectory[s] holds every chain after s steps; trajectory[0] is z_T.
  std::vector<Points> trajectory;
  std::vector<int> timesteps;  // timestep of each trajectory entry
};

// Runs DDIM over the ladder from z_T to 0 with an arbitrary predictor.
SampleOutput ddim_sample(const NoiseSchedule& schedule, int n_infer_steps, Points z_T,
                         const NoisePredictor& predictor, bool record_trajectory);

// CFG predictor of the network with the reversal schedule of `guidance`.
NoisePredictor guided_predictor(const ModelParams& params, const NoiseSchedule& schedule,
                                const GuidanceSpec& guidance, std::vector<Cond> conds,
                                const LoraAdapter* adapter = nullptr);

// Standard Gaussian start, one chain per cond entry.
SampleOutput sample(const ModelParams& params, const NoiseSchedule& schedule, const GuidanceSpec& guidance,
                    std::span<const Cond> conds, std::uint64_t seed, bool record_trajectory,
                    const LoraAdapter* adapter = nullptr);

SampleOutput sample(const ModelParams& params, const NoiseSchedule& schedule, const GuidanceSpec& guidance,
                    const Cond& cond, int n, std::uint64_t seed, bool record_trajectory,
                    const LoraAdapter* adapter = nullptr);

Points initial_noise(int n, std::uint64_t seed);

// Trajectory CSV `chain,step,t,x,y`.
void write_trajectory_csv(const SampleOutput& out, const std::filesystem::path& path);
// Sample CSV `x,y,cond`; cond is the concept id, or -1 for null.
void write_samples_csv(const Points& points, std::span<const Cond> conds, const std::filesystem::path& path);

}  // namespace antlab
