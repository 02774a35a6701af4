#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "antlab/ant_finetune.hpp"
#include "antlab/score_net.hpp"

namespace antlab {

// min_W'  sum_i sum_j ||W' e_ij - (W + dW_i) e_ij||^2 + beta sum_j ||W' p_j - W p_j||^2
struct FusionProblem {
  Eigen::MatrixXd W;                              // h x d_e
  std::vector<Eigen::MatrixXd> deltas;            // q of h x d_e
  std::vector<std::vector<Eigen::VectorXd>> targets;  // per delta, its e_ij
  std::vector<Eigen::VectorXd> preserve;          // p_j
  double beta = 0.1;

  void validate() const;
};

double fusion_objective(const FusionProblem& p, const Eigen::MatrixXd& W_new);
Eigen::MatrixXd fusion_gradient(const FusionProblem& p, const Eigen::MatrixXd& W_new);

// Closed-form minimizer W + (sum_i dW_i G_i) B^-1 with G_i = sum_j e_ij e_ij^T
// and B = sum_i G_i + beta sum_j p_j p_j^T, via a Cholesky solve. A singular B
// gets 1e-10 trace(B)/d_e of jitter (logged); if that fails too, throws
// RuntimeFailure naming the rank.
Eigen::MatrixXd fuse(const FusionProblem& p);

struct MultiConfig {
  AntLossConfig lora;  // steps default to 50
  int rank = 4;
  double beta = 0.1;
  bool preserve_null = true;  // add the unconditional embedding to the preserve set
  MultiConfig();
};

// ANT loss on the adapter only; the base parameters and embeddings are untouched.
LoraAdapter train_concept_lora(const ModelParams& pretrained, const NoiseSchedule& schedule, int concept_id,
                               const AntLossConfig& cfg, int rank);

// e = E_concept[k] + E_context[c] for every context c.
std::vector<Eigen::VectorXd> concept_embeddings(const ModelParams& params, int concept_id);

FusionProblem build_fusion_problem(const ModelParams& pretrained, const std::vector<LoraAdapter>& adapters,
                                   const std::vector<int>& concepts, const MultiConfig& cfg);

struct MultiResult {
  ModelParams params;  // pretrained with W_c replaced by the fused matrix
  std::vector<LoraAdapter> adapters;
  double objective = 0.0;
};

MultiResult erase_multi(const ModelParams& pretrained, const NoiseSchedule& schedule, const std::vector<int>& concepts,
                        const MultiConfig& cfg);

// W_c + dW of a single adapter, installed into a copy.
ModelParams merge_adapter(const ModelParams& params, const LoraAdapter& adapter);

struct FusionReportRow {
  int concept_id = 0;
  double acc_e_before = 0.0;
  double acc_e_after = 0.0;
};

void write_fusion_report_csv(const std::vector<FusionReportRow>& rows, const std::filesystem::path& path);

}  // namespace antlab
