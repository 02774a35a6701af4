#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "antlab/run_config.hpp"

namespace antlab {

// Artifact names inside run_dir.
namespace artifact {
inline constexpr const char* config = "config.resolved.txt";
inline constexpr const char* data = "data.csv";
inline constexpr const char* pretrained = "pretrained.ckpt";
inline constexpr const char* pretrain_loss = "pretrain_loss.csv";
inline constexpr const char* sweep = "sweep_tprime.csv";
inline constexpr const char* trajectories = "trajectories.csv";
inline constexpr const char* mask = "mask.txt";
inline constexpr const char* saliency_curve = "saliency_curve.csv";
inline constexpr const char* erased = "erased.ckpt";
inline constexpr const char* erase_log = "erase_log.csv";
inline constexpr const char* fusion_report = "fusion_report.csv";
inline constexpr const char* eval_report = "eval_report.csv";
inline constexpr const char* eval_schema = "eval_schema.txt";
inline constexpr const char* ablation = "ablation.csv";
inline constexpr const char* samples = "samples.csv";
inline constexpr const char* summary = "summary.csv";
}  // namespace artifact

struct SweepRow {
  int t_prime = 0;
  double frac_target = 0.0;
  double off_manifold = 0.0;
};

// Reversed-guidance sampling of `target` from a fixed model, one row per t'.
std::vector<SweepRow> sweep_tprime(const ModelParams& params, const NoiseSchedule& schedule, const MixtureSpec& oracle,
                                   int target, const std::vector<int>& grid, int n, double scale,
                                   std::uint64_t seed, int threshold_draws);
void write_sweep_csv(const std::vector<SweepRow>& rows, const std::filesystem::path& path);

struct AblationRow {
  Variant variant = Variant::full;
  double acc_e = 0.0;
  double acc_p = 0.0;
  double h_c = 0.0;
  double off_manifold = 0.0;
};

// Each stage reads its inputs from run_dir and writes its artifacts there.
void stage_gen_data(const RunConfig& cfg);
void stage_pretrain(const RunConfig& cfg);
void stage_sweep(const RunConfig& cfg);
void stage_trajectories(const RunConfig& cfg);
void stage_saliency(const RunConfig& cfg);
void stage_erase(const RunConfig& cfg);        // single concept, ant.target
void stage_erase_multi(const RunConfig& cfg);  // fuse.concepts
void stage_eval(const RunConfig& cfg);
void stage_summary(const RunConfig& cfg);
void stage_plot(const RunConfig& cfg);
std::vector<AblationRow> stage_ablate(const RunConfig& cfg);

// Concepts erased by the configured run: fuse.concepts when set, else ant.target.
std::vector<int> erased_concepts(const RunConfig& cfg);

struct StageOutcome {
  std::string stage;
  bool ran = false;
};

// gen-data, pretrain, sweep, trajectories, saliency, erase, eval, summary,
// plot. A stage is skipped when its stamp records the same config keys and
// input checksums and its outputs still match their recorded checksums. A
// failing stage rethrows with its name and the last good artifact.
std::vector<StageOutcome> run_pipeline(const RunConfig& cfg, bool force);

// Writes config.resolved.txt into run_dir.
void write_resolved_config(const RunConfig& cfg);

}  // namespace antlab
