#include "antlab/diffusion.hpp"

#include <cmath>

#include "antlab/csv.hpp"

namespace antlab {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
  require(T >= 1, "schedule: T must be >= 1");
  require(beta_start > 0.0 && beta_end < 1.0 && (T == 1 || beta_start < beta_end),
          "schedule: need 0 < beta_start < beta_end < 1");
  NoiseSchedule s;
  s.betas_.resize(T);
  s.alpha_bars_.resize(T + 1);
  s.alpha_bars_[0] = 1.0;
  for (int t = 1; t <= T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / (T - 1);
    s.betas_[t - 1] = beta_start + frac * (beta_end - beta_start);
    s.alpha_bars_[t] = s.alpha_bars_[t - 1] * (1.0 - s.betas_[t - 1]);
  }
  return s;
}

double NoiseSchedule::beta(int t) const {
  require(t >= 1 && t <= T(), "schedule: timestep out of range");
  return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  require(t >= 0 && t <= T(), "schedule: timestep out of range");
  return alpha_bars_[t];
}

std::vector<int> NoiseSchedule::ladder(int n) const {
  require(n >= 1 && n <= T(), "ladder: n_infer_steps must lie in [1, T]");
  std::vector<int> steps(n + 1);
  for (int i = 0; i <= n; ++i) steps[i] = static_cast<int>((static_cast<long long>(i) * T()) / n);
  return steps;
}

void GuidanceSpec::validate(const NoiseSchedule& schedule) const {
  require(scale >= 0.0 && std::isfinite(scale), "guidance: scale must be finite and >= 0");
  require(n_infer_steps >= 1 && n_infer_steps <= schedule.T(), "guidance: n_infer_steps must lie in [1, T]");
  require(t_prime >= 0 && t_prime <= n_infer_steps, "guidance: t_prime must lie in [0, n_infer_steps]");
}

int sgn_schedule(int t, int t_prime) { return t > t_prime ? 1 : -1; }

Vec2 cfg_combine(const Vec2& eps_uncond, const Vec2& eps_cond, double s, int sign) {
  return eps_uncond + (s * sign) * (eps_cond - eps_uncond);
}

Vec2 forward_noise(const NoiseSchedule& schedule, const Vec2& x0, int t, const Vec2& eps) {
  const double ab = schedule.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

namespace {
struct StepCoefficients {
  double inv_sqrt_ab, sqrt_one_minus_ab, sqrt_ab_next, sqrt_one_minus_ab_next;
};

StepCoefficients step_coefficients(const NoiseSchedule& schedule, int t, int t_next) {
  require(t > t_next && t_next >= 0, "ddim_step: need t > t_next >= 0");
  const double ab = schedule.alpha_bar(t);
  const double ab_next = schedule.alpha_bar(t_next);
  if (!(ab > 0.0)) throw std::domain_error("ddim_step: alpha_bar(t) is zero");
  return {1.0 / std::sqrt(ab), std::sqrt(1.0 - ab), std::sqrt(ab_next), std::sqrt(1.0 - ab_next)};
}
}  // namespace

Vec2 ddim_step(const NoiseSchedule& schedule, const Vec2& z_t, int t, int t_next, const Vec2& eps_hat) {
  const auto k = step_coefficients(schedule, t, t_next);
  const Vec2 x0_hat = (z_t - k.sqrt_one_minus_ab * eps_hat) * k.inv_sqrt_ab;
  return k.sqrt_ab_next * x0_hat + k.sqrt_one_minus_ab_next * eps_hat;
}

void ddim_step(const NoiseSchedule& schedule, Points& z, int t, int t_next, const Points& eps_hat) {
  const auto k = step_coefficients(schedule, t, t_next);
  z = k.sqrt_ab_next * ((z - k.sqrt_one_minus_ab * eps_hat) * k.inv_sqrt_ab) + k.sqrt_one_minus_ab_next * eps_hat;
}

SampleOutput ddim_sample(const NoiseSchedule& schedule, int n_infer_steps, Points z_T,
                         const NoisePredictor& predictor, bool record_trajectory) {
  const auto ladder = schedule.ladder(n_infer_steps);
  SampleOutput out;
  out.points = std::move(z_T);
  if (record_trajectory) {
    out.trajectory.push_back(out.points);
    out.timesteps.push_back(ladder[n_infer_steps]);
  }
  for (int i = n_infer_steps; i >= 1; --i) {
    const Points eps = predictor(out.points, ladder[i], i);
    ddim_step(schedule, out.points, ladder[i], ladder[i - 1], eps);
    if (!out.points.allFinite()) {
      throw RuntimeFailure("sampling aborted: non-finite latent at ladder step " + std::to_string(i) +
                           " (t=" + std::to_string(ladder[i]) + ")");
    }
    if (record_trajectory) {
      out.trajectory.push_back(out.points);
      out.timesteps.push_back(ladder[i - 1]);
    }
  }
  return out;
}

NoisePredictor guided_predictor(const ModelParams& params, const NoiseSchedule& schedule,
                                const GuidanceSpec& guidance, std::vector<Cond> conds,
                                const LoraAdapter* adapter) {
  guidance.validate(schedule);
  return [&params, &schedule, guidance, conds = std::move(conds), adapter](const Points& z, int t, int i) {
    const int n = static_cast<int>(z.cols());
    require(static_cast<int>(conds.size()) == n, "sample: cond count does not match chain count");
    const double t_norm = static_cast<double>(t) / schedule.T();
    // Columns [0, n) unconditional, [n, 2n) conditional.
    Points zz(2, 2 * n);
    zz.leftCols(n) = z;
    zz.rightCols(n) = z;
    std::vector<double> ts(2 * n, t_norm);
    std::vector<Cond> cs(2 * n, Cond::null());
    std::copy(conds.begin(), conds.end(), cs.begin() + n);
    ForwardPass pass(params, zz, ts, cs, adapter);
    const double coeff = guidance.scale * sgn_schedule(i, guidance.t_prime);
    const auto& y = pass.output();
    return Points(y.leftCols(n) + coeff * (y.rightCols(n) - y.leftCols(n)));
  };
}

Points initial_noise(int n, std::uint64_t seed) {
  Rng rng(seed);
  Points z(2, n);
  for (int i = 0; i < n; ++i) z.col(i) = rng.normal2();
  return z;
}

SampleOutput sample(const ModelParams& params, const NoiseSchedule& schedule, const GuidanceSpec& guidance,
                    std::span<const Cond> conds, std::uint64_t seed, bool record_trajectory,
                    const LoraAdapter* adapter) {
  require(!conds.empty(), "sample: need at least one chain");
  auto predictor = guided_predictor(params, schedule, guidance, {conds.begin(), conds.end()}, adapter);
  return ddim_sample(schedule, guidance.n_infer_steps, initial_noise(static_cast<int>(conds.size()), seed),
                     predictor, record_trajectory);
}

SampleOutput sample(const ModelParams& params, const NoiseSchedule& schedule, const GuidanceSpec& guidance,
                    const Cond& cond, int n, std::uint64_t seed, bool record_trajectory,
                    const LoraAdapter* adapter) {
  require(n >= 1, "sample: n must be >= 1");
  const std::vector<Cond> conds(n, cond);
  return sample(params, schedule, guidance, conds, seed, record_trajectory, adapter);
}

void write_trajectory_csv(const SampleOutput& out, const std::filesystem::path& path) {
  std::string s = "chain,step,t,x,y\n";
  for (int chain = 0; chain < out.points.cols(); ++chain) {
    for (std::size_t step = 0; step < out.trajectory.size(); ++step) {
      const auto& p = out.trajectory[step];
      s += std::to_string(chain) + ',' + std::to_string(step) + ',' + std::to_string(out.timesteps[step]) + ',' +
           format_double(p(0, chain)) + ',' + format_double(p(1, chain)) + '\n';
    }
  }
  write_file_atomic(path, s);
}

void write_samples_csv(const Points& points, std::span<const Cond> conds, const std::filesystem::path& path) {
  require(static_cast<std::size_t>(points.cols()) == conds.size(), "write_samples_csv: size mismatch");
  std::string s = "x,y,cond\n";
  for (int i = 0; i < points.cols(); ++i) {
    const int c = conds[i].concept_id ? *conds[i].concept_id : -1;
    s += format_double(points(0, i)) + ',' + format_double(points(1, i)) + ',' + std::to_string(c) + '\n';
  }
  write_file_atomic(path, s);
}

}  // namespace antlab
