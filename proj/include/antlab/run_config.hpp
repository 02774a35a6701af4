#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "antlab/ant_finetune.hpp"
#include "antlab/diffusion.hpp"
#include "antlab/eval_metrics.hpp"
#include "antlab/multi_fuse.hpp"
#include "antlab/pretrainer.hpp"
#include "antlab/saliency.hpp"
#include "antlab/score_net.hpp"

namespace antlab {

struct DataConfig {
  int n_concepts = 8;
  int n_contexts = 20;
  double radius_base = 2.0;
  double mode_std = 0.1;
  int n_points = 20000;
};

struct ScheduleConfig {
  int T = 100;
  double beta_start = 1e-3;
  double beta_end = 0.2;
  int n_infer_steps = 50;
  NoiseSchedule make() const { return NoiseSchedule::linear(T, beta_start, beta_end); }
};

struct AntRunConfig {
  int target = 2;
  int t_prime = 43;  // on the inference ladder; the loss uses its training-schedule image
  Variant variant = Variant::full;
  bool use_saliency = true;
  AntLossConfig loss;
};

struct FuseRunConfig {
  std::vector<int> concepts;  // empty: the pipeline erases ant.target alone
  int t_prime = 40;
  MultiConfig multi;
};

struct EvalRunConfig {
  EvalConfig eval;
  std::vector<int> sweep_grid{0, 5, 10, 15, 20, 25, 30, 35, 40, 45, 50};
  int sweep_samples = 1000;
  int n_chains = 16;  // trajectories dumped for plotting
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path run_dir = "run";
  DataConfig data;
  NetConfig net;
  ScheduleConfig schedule;
  PretrainConfig pretrain;
  SaliencyConfig saliency;
  AntRunConfig ant;
  FuseRunConfig fuse;
  EvalRunConfig eval;

  // Fills everything that follows from other keys: module seeds from `seed`,
  // vocabulary sizes, training-schedule t', the loss terms of ant.variant.
  void finalize();
  void validate() const;
  MixtureSpec mixture() const;
};

// `key = value` lines, `#` comments. Unknown keys and malformed values throw
// InvalidInput. The result is finalized.
RunConfig parse_config(const std::string& text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

// Every key with its current value, in a fixed order; parse_config of this
// text gives back the same config.
std::string resolved_config_text(const RunConfig& cfg);
std::vector<std::string> config_keys();

}  // namespace antlab
