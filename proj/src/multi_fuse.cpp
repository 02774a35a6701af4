#include "antlab/multi_fuse.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include <Eigen/Dense>

#include "antlab/adam.hpp"
#include "antlab/csv.hpp"
#include "antlab/parallel.hpp"
#include "antlab/pretrainer.hpp"

namespace antlab {

void FusionProblem::validate() const {
  const auto h = W.rows();
  const auto d = W.cols();
  require(h >= 1 && d >= 1, "fusion: W must be non-empty");
  require(!deltas.empty(), "fusion: need at least one delta");
  require(deltas.size() == targets.size(), "fusion: one target list per delta");
  require(beta >= 0.0 && std::isfinite(beta), "fusion: beta must be >= 0");
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    require(deltas[i].rows() == h && deltas[i].cols() == d, "fusion: delta shape differs from W");
    for (const auto& e : targets[i]) require(e.size() == d, "fusion: target embedding has the wrong length");
  }
  for (const auto& e : preserve) require(e.size() == d, "fusion: preserve embedding has the wrong length");
}

double fusion_objective(const FusionProblem& p, const Eigen::MatrixXd& W_new) {
  double f = 0.0;
  for (std::size_t i = 0; i < p.deltas.size(); ++i) {
    const Eigen::MatrixXd diff = W_new - p.W - p.deltas[i];
    for (const auto& e : p.targets[i]) f += (diff * e).squaredNorm();
  }
  const Eigen::MatrixXd diff = W_new - p.W;
  for (const auto& e : p.preserve) f += p.beta * (diff * e).squaredNorm();
  return f;
}

Eigen::MatrixXd fusion_gradient(const FusionProblem& p, const Eigen::MatrixXd& W_new) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p.W.rows(), p.W.cols());
  for (std::size_t i = 0; i < p.deltas.size(); ++i) {
    const Eigen::MatrixXd diff = W_new - p.W - p.deltas[i];
    for (const auto& e : p.targets[i]) g += 2.0 * (diff * e) * e.transpose();
  }
  const Eigen::MatrixXd diff = W_new - p.W;
  for (const auto& e : p.preserve) g += 2.0 * p.beta * (diff * e) * e.transpose();
  return g;
}

Eigen::MatrixXd fuse(const FusionProblem& p) {
  p.validate();
  const auto d = p.W.cols();
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(d, d);
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p.W.rows(), d);  // sum_i dW_i G_i
  for (std::size_t i = 0; i < p.deltas.size(); ++i) {
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(d, d);
    for (const auto& e : p.targets[i]) G.noalias() += e * e.transpose();
    B += G;
    A.noalias() += p.deltas[i] * G;
  }
  for (const auto& e : p.preserve) B.noalias() += p.beta * e * e.transpose();

  // W* B = W B + A, so (W* - W) = A B^-1; solve B X = A^T since B is symmetric.
  auto solve = [&](const Eigen::MatrixXd& M) -> std::optional<Eigen::MatrixXd> {
    Eigen::LLT<Eigen::MatrixXd> llt(M);
    if (llt.info() != Eigen::Success) return std::nullopt;
    const Eigen::VectorXd diag = llt.matrixL().toDenseMatrix().diagonal();
    if (diag.minCoeff() <= 1e-12 * std::max(1.0, diag.maxCoeff())) return std::nullopt;
    return Eigen::MatrixXd(llt.solve(A.transpose()).transpose());
  };
  if (auto x = solve(B)) return p.W + *x;

  const double trace = B.trace();
  const auto rank = Eigen::FullPivLU<Eigen::MatrixXd>(B).rank();
  if (trace > 0.0) {
    const double jitter = 1e-10 * trace / static_cast<double>(d);
    log_warn("fusion: normal matrix is singular (rank " + std::to_string(rank) + " of " + std::to_string(d) +
             "), adding jitter " + format_double(jitter));
    if (auto x = solve(B + jitter * Eigen::MatrixXd::Identity(d, d))) return p.W + *x;
  }
  throw RuntimeFailure("fusion: normal matrix has rank " + std::to_string(rank) + " of " + std::to_string(d) +
                       " and jitter did not make it positive definite; add targets or set beta > 0");
}

MultiConfig::MultiConfig() {
  lora.steps = 50;
  lora.lambda1 = 0.4;
  lora.lambda2 = 0.5;
  lora.lambda3 = 0.2;
  lora.t_prime_train = 80;
}

LoraAdapter train_concept_lora(const ModelParams& pretrained, const NoiseSchedule& schedule, int concept_id,
                               const AntLossConfig& cfg, int rank) {
  cfg.validate(schedule);
  const NetConfig& net = pretrained.config();
  require(concept_id >= 0 && concept_id < net.n_concepts, "lora: concept out of range");
  LoraAdapter adapter = LoraAdapter::create(net, rank, derive_seed(cfg.seed, "lora-init", concept_id));
  adapter.concept_id = concept_id;
  const ModelParams frozen = clone_frozen(pretrained);
  Adam adam(adapter.values.size());
  Rng rng(derive_seed(cfg.seed, "lora-steps", concept_id));
  for (int step = 0; step < cfg.steps; ++step) {
    const Cond cond = erase_prompt(net, concept_id, rng);
    const auto res = ant_loss(frozen, frozen, schedule, cond, cfg, rng, &adapter);
    if (!std::isfinite(res.terms.total)) {
      throw RuntimeFailure("lora training for concept " + std::to_string(concept_id) + " diverged at step " +
                           std::to_string(step));
    }
    adam.step(adapter.values, res.grad, cfg.lr);
  }
  return adapter;
}

std::vector<Eigen::VectorXd> concept_embeddings(const ModelParams& params, int concept_id) {
  std::vector<Eigen::VectorXd> out;
  for (int c = 0; c < params.config().n_contexts; ++c) out.push_back(params.embedding(Cond::of(concept_id, c)));
  return out;
}

FusionProblem build_fusion_problem(const ModelParams& pretrained, const std::vector<LoraAdapter>& adapters,
                                   const std::vector<int>& concepts, const MultiConfig& cfg) {
  require(adapters.size() == concepts.size(), "fusion: one adapter per concept");
  FusionProblem p;
  p.W = pretrained.matrix("W_c");
  p.beta = cfg.beta;
  for (std::size_t i = 0; i < adapters.size(); ++i) {
    p.deltas.push_back(adapters[i].delta());
    p.targets.push_back(concept_embeddings(pretrained, concepts[i]));
  }
  for (int k = 0; k < pretrained.config().n_concepts; ++k) {
    if (std::find(concepts.begin(), concepts.end(), k) != concepts.end()) continue;
    for (auto& e : concept_embeddings(pretrained, k)) p.preserve.push_back(std::move(e));
  }
  if (cfg.preserve_null) p.preserve.push_back(pretrained.embedding(Cond::null()));
  return p;
}

MultiResult erase_multi(const ModelParams& pretrained, const NoiseSchedule& schedule, const std::vector<int>& concepts,
                        const MultiConfig& cfg) {
  require(!concepts.empty(), "erase_multi: need at least one concept");
  for (std::size_t i = 0; i < concepts.size(); ++i) {
    require(concepts[i] >= 0 && concepts[i] < pretrained.config().n_concepts, "erase_multi: concept out of range");
    for (std::size_t j = 0; j < i; ++j) require(concepts[i] != concepts[j], "erase_multi: duplicate concept");
  }
  MultiResult result{writable_copy(pretrained), std::vector<LoraAdapter>(concepts.size()), 0.0};
  parallel_for(static_cast<int>(concepts.size()), [&](int i) {
    result.adapters[i] = train_concept_lora(pretrained, schedule, concepts[i], cfg.lora, cfg.rank);
  });
  const FusionProblem problem = build_fusion_problem(pretrained, result.adapters, concepts, cfg);
  const Eigen::MatrixXd fused = fuse(problem);
  result.objective = fusion_objective(problem, fused);
  result.params.mutable_matrix("W_c") = fused;
  return result;
}

ModelParams merge_adapter(const ModelParams& params, const LoraAdapter& adapter) {
  ModelParams out = writable_copy(params);
  out.mutable_matrix("W_c") += adapter.delta();
  return out;
}

void write_fusion_report_csv(const std::vector<FusionReportRow>& rows, const std::filesystem::path& path) {
  std::string s = "concept,acc_e_before,acc_e_after\n";
  for (const auto& r : rows) {
    s += std::to_string(r.concept_id) + ',' + format_double(r.acc_e_before) + ',' + format_double(r.acc_e_after) + '\n';
  }
  write_file_atomic(path, s);
}

}  // namespace antlab
