#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "antlab/diffusion.hpp"
#include "antlab/score_net.hpp"
#include "antlab/synth_data.hpp"

namespace antlab {

struct SaliencyMask;

enum class LatentSource { teacher_partial_ddim, noised_data };

std::string to_string(LatentSource s);
LatentSource parse_latent_source(const std::string& s);

// Which loss terms are live. erase_all replaces the late-only erase range by
// the whole schedule.
struct LossTerms {
  bool preserve = true;
  bool erase = true;
  bool erase_all = false;
  bool uncond_early = true;
  bool uncond_late = true;
  bool operator==(const LossTerms&) const = default;
};

enum class Variant { A, B, C, D, E, full };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);
LossTerms terms_for(Variant v);

struct AntLossConfig {
  double lambda1 = 1.0;
  double lambda2 = 0.5;
  double lambda3 = 0.5;
  double eta = 1.0;
  // Training-schedule image of the ladder reversal step (43 of 50 at T = 100).
  int t_prime_train = 86;
  int steps = 250;
  int batch = 1;  // latent pairs per gradient step
  double lr = 5e-4;
  std::uint64_t seed = 0;
  LatentSource latent_source = LatentSource::teacher_partial_ddim;
  // Guidance used by the teacher when it generates latents; 0 gives the
  // unconditional chain.
  double teacher_scale = 3.0;
  int teacher_t_prime = 0;
  int n_infer_steps = 50;
  LossTerms terms;

  void validate(const NoiseSchedule& schedule) const;
};

// ceil(t_prime / n_infer_steps * T)
int t_prime_to_train(int t_prime, int n_infer_steps, int T);

// One training example of the loss: the same chain observed at t1 (early,
// t1 > t') and at t2 (late, t2 <= t'). A timestep of 0 marks an empty range.
struct LatentPair {
  Cond cond;
  int t1 = 0;
  Vec2 z1 = Vec2::Zero();
  int t2 = 0;
  Vec2 z2 = Vec2::Zero();
};

struct LatentRequest {
  Cond cond;
  int t1 = 0;
  int t2 = 0;
  std::uint64_t seed = 0;
};

// Latents for each request. teacher_partial_ddim runs the frozen teacher's
// guided DDIM from z_T = initial_noise(1, seed) and reads both timesteps off
// the same chain; noised_data noises one data point of the conditioned concept
// with independent noise per timestep. `data` is required only for
// noised_data. The result of a request does not depend on the others.
std::vector<LatentPair> make_latent_pairs(const ModelParams& frozen, const NoiseSchedule& schedule,
                                          std::span<const LatentRequest> reqs, const AntLossConfig& cfg,
                                          const Dataset* data = nullptr);

// Single latent at timestep t.
Vec2 make_latent(const ModelParams& frozen, const NoiseSchedule& schedule, const Cond& cond, int t,
                 std::uint64_t seed, const AntLossConfig& cfg, const Dataset* data = nullptr);

// Draws t1 ~ U{t'+1..T} and t2 ~ U{1..t'} (U{1..T} when erase_all); 0 marks a
// collapsed range.
std::pair<int, int> draw_timesteps(const NoiseSchedule& schedule, const AntLossConfig& cfg, Rng& rng);

struct LossBreakdown {
  double preserve = 0.0;
  double erase = 0.0;
  double uncond_early = 0.0;
  double uncond_late = 0.0;
  double total = 0.0;  // preserve + l1 erase + l2 uncond_early + l3 uncond_late
};

struct AntLossResult {
  LossBreakdown terms;  // unweighted term means
  std::vector<double> grad;  // aligned with params.flat(), or adapter.values
  int t1 = 0;  // timesteps of the first pair
  int t2 = 0;
};

// The four-term loss on fixed latents. Targets are built from `frozen` only,
// so they are constants with respect to `live`.
AntLossResult ant_loss(const ModelParams& live, const ModelParams& frozen, const NoiseSchedule& schedule,
                       std::span<const LatentPair> pairs, const AntLossConfig& cfg,
                       const LoraAdapter* adapter = nullptr);

// Same loss with fresh timesteps and latents drawn from `rng`.
AntLossResult ant_loss(const ModelParams& live, const ModelParams& frozen, const NoiseSchedule& schedule,
                       const Cond& cond, const AntLossConfig& cfg, Rng& rng, const LoraAdapter* adapter = nullptr,
                       const Dataset* data = nullptr);

struct EraseLogRow {
  int step = 0;
  int t1 = 0;
  int t2 = 0;
  LossBreakdown terms;
};

struct EraseResult {
  ModelParams params;
  std::vector<EraseLogRow> log;
  std::uint64_t frozen_checksum_before = 0;
  std::uint64_t frozen_checksum_after = 0;
};

// Erasure prompt: the target concept in a context drawn from `rng`.
Cond erase_prompt(const NetConfig& net, int target, Rng& rng);

// Full or mask-restricted finetuning of the pretrained model away from `target`.
EraseResult erase_single(const ModelParams& pretrained, const NoiseSchedule& schedule, int target,
                         const AntLossConfig& cfg, const SaliencyMask* mask = nullptr,
                         const Dataset* data = nullptr);

void write_erase_log_csv(const std::vector<EraseLogRow>& log, const std::filesystem::path& path);

}  // namespace antlab
