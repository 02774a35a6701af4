#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "antlab/diffusion.hpp"
#include "antlab/score_net.hpp"
#include "antlab/synth_data.hpp"

namespace antlab {

// 2 / ((1 - acc_e)^-1 + acc_p^-1); 0 when acc_e = 1 or acc_p = 0.
double harmonic_mean_hc(double acc_e, double acc_p);

// Chains for concept k use conds (k, i mod n_contexts), so every context is
// covered evenly.
std::vector<Cond> eval_conds(const NetConfig& net, int concept_id, int n);

// Per-concept fraction of n guided samples that the Bayes oracle labels with
// the conditioned concept. Concept k draws its start noise from
// derive_seed(seed, "eval", k).
std::vector<double> accuracy(const ModelParams& params, const NoiseSchedule& schedule, const GuidanceSpec& guidance,
                             std::span<const int> concepts, int n, std::uint64_t seed, const MixtureSpec& oracle,
                             const LoraAdapter* adapter = nullptr);

// Lower-tail percentile of log_density over n_draws fresh oracle samples.
double manifold_threshold(const MixtureSpec& oracle, std::uint64_t seed, int n_draws = 100000,
                          double percentile = 0.01);

double off_manifold_fraction(const Points& samples, const MixtureSpec& oracle, double threshold);

// Squared 2-Wasserstein distance between Gaussians fitted to each set.
double w2_gaussian(const Points& a, const Points& b);

struct ConceptRow {
  int concept_id = 0;
  bool erased = false;
  double acc = 0.0;
  double off_manifold_frac = 0.0;
  double w2 = 0.0;  // against fresh oracle draws of the same concept
};

struct EvalReport {
  std::vector<ConceptRow> rows;
  double acc_e = 0.0;  // mean over erased concepts
  double acc_p = 0.0;  // unweighted mean over preserved concepts
  double h_c = 0.0;
  double off_manifold_frac = 0.0;  // pooled over all samples
  int n_samples = 0;
  std::uint64_t seed = 0;
  GuidanceSpec guidance;
};

struct EvalConfig {
  int n_samples = 1000;
  std::uint64_t seed = 0;
  GuidanceSpec guidance;
  int threshold_draws = 100000;

  void validate(const NoiseSchedule& schedule) const;
};

EvalReport evaluate(const ModelParams& params, const NoiseSchedule& schedule, const MixtureSpec& oracle,
                    std::span<const int> erased, const EvalConfig& cfg, const LoraAdapter* adapter = nullptr);

// `eval_report.csv` and its column schema next to it.
void write_eval_report_csv(const EvalReport& report, const std::filesystem::path& path);
void write_eval_schema(const std::filesystem::path& path);

}  // namespace antlab
