#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "antlab/common.hpp"

namespace antlab {

enum class Activation { silu, tanh };

std::string to_string(Activation a);
Activation parse_activation(const std::string& s);

struct NetConfig {
  int hidden_width = 128;
  int n_hidden_layers = 2;
  int time_embed_dim = 16;  // sin/cos pairs at frequencies 2^0 .. 2^(dim/2 - 1)
  int cond_embed_dim = 8;
  int n_concepts = 8;
  int n_contexts = 20;
  Activation activation = Activation::silu;

  // Row n_concepts of the concept table and row n_contexts of the context
  // table are the reserved null embeddings.
  int null_concept() const { return n_concepts; }
  int null_context() const { return n_contexts; }

  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

// A conditioning signal: concept and context ids, either of which may be null.
struct Cond {
  std::optional<int> concept_id;
  std::optional<int> context_id;

  static Cond null() { return {}; }
  static Cond of(int concept_id, int context_id) { return {concept_id, context_id}; }
  static Cond of_concept(int concept_id) { return {concept_id, std::nullopt}; }
  bool is_null() const { return !concept_id && !context_id; }
  bool operator==(const Cond&) const = default;
};

struct ParamBlock {
  std::string name;
  std::size_t offset = 0;
  int rows = 0;
  int cols = 0;
  std::size_t size() const { return static_cast<std::size_t>(rows) * cols; }
};

// Fixed layout, in order:
//   emb_concept (K+1, d_e), emb_context (C+1, d_e),
//   W_z (h, 2), W_t (h, d_t), W_c (h, d_e), b_1 (h, 1),
//   W_l (h, h), b_l (h, 1)   for l = 2 .. n_hidden_layers,
//   W_out (2, h), b_out (2, 1).
// Every block is stored row-major.
std::vector<ParamBlock> make_layout(const NetConfig& config);

class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(NetConfig config);  // zero-filled

  static ModelParams initialize(const NetConfig& config, std::uint64_t seed);

  const NetConfig& config() const { return config_; }
  const std::vector<ParamBlock>& layout() const { return layout_; }
  const ParamBlock& block(const std::string& name) const;

  std::size_t size() const { return flat_.size(); }
  const std::vector<double>& flat() const { return flat_; }
  // Throws RuntimeFailure on a read-only clone.
  std::vector<double>& mutable_flat();

  bool read_only() const { return read_only_; }
  std::uint64_t checksum() const { return antlab::checksum(flat_); }

  Eigen::Map<const RowMatrix> matrix(const std::string& name) const;
  Eigen::Map<RowMatrix> mutable_matrix(const std::string& name);

  // Cond embedding e = E_concept[concept or null] + E_context[context or null].
  Eigen::VectorXd embedding(const Cond& cond) const;

 private:
  friend ModelParams clone_frozen(const ModelParams&);
  friend ModelParams writable_copy(const ModelParams&);
  NetConfig config_;
  std::vector<ParamBlock> layout_;
  std::vector<double> flat_;
  bool read_only_ = false;
};

// Deep copy flagged read-only: the stop-gradient teacher.
ModelParams clone_frozen(const ModelParams& params);
// Deep copy that is always writable, even from a frozen source.
ModelParams writable_copy(const ModelParams& params);

// Named tensors in layout order.
std::map<std::string, RowMatrix> unflatten(const ModelParams& params);
std::vector<double> flatten(const NetConfig& config, const std::map<std::string, RowMatrix>& tensors);

// Low-rank delta on W_c: delta = up * down, up (h x r), down (r x d_e).
struct LoraAdapter {
  int rank = 4;
  int rows = 0;  // h
  int cols = 0;  // d_e
  int concept_id = -1;
  std::string target = "W_c";
  std::vector<double> values;  // down (row-major) followed by up (row-major)

  static LoraAdapter create(const NetConfig& config, int rank, std::uint64_t seed);

  std::size_t down_size() const { return static_cast<std::size_t>(rank) * cols; }
  Eigen::Map<const RowMatrix> down() const;
  Eigen::Map<const RowMatrix> up() const;
  Eigen::MatrixXd delta() const;
};

// Sinusoidal features of t_norm.
Eigen::VectorXd time_features(int dim, double t_norm);

// One batched evaluation of the noise predictor, keeping the activations
// needed for reverse mode. Columns are samples.
class ForwardPass {
 public:
  ForwardPass(const ModelParams& params, const Points& z, std::span<const double> t_norm,
              std::span<const Cond> cond, const LoraAdapter* adapter = nullptr);

  const Points& output() const { return output_; }
  int batch() const { return static_cast<int>(output_.cols()); }

  // Accumulates dL/dparams into grad (aligned with params.flat()).
  void backward(const Points& d_output, std::span<double> grad) const;
  // Accumulates dL/dadapter into grad (aligned with adapter.values).
  void backward_adapter(const Points& d_output, std::span<double> grad) const;

 private:
  Eigen::MatrixXd first_layer_grad(const Points& d_output, std::vector<Eigen::MatrixXd>* d_pre) const;

  const ModelParams& params_;
  const LoraAdapter* adapter_;
  std::vector<int> concept_rows_;
  std::vector<int> context_rows_;
  Points z_;
  Eigen::MatrixXd time_;
  Eigen::MatrixXd emb_;
  std::vector<Eigen::MatrixXd> pre_;
  std::vector<Eigen::MatrixXd> act_;
  Points output_;
};

// Single-sample prediction of the noise.
Vec2 forward(const ModelParams& params, const Vec2& z, double t_norm, const Cond& cond,
             const LoraAdapter* adapter = nullptr);

struct TrainSample {
  Vec2 z;
  double t_norm = 0.0;
  Cond cond;
  Vec2 target;
};

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

// Mean over the batch of ||forward - target||^2 and its exact gradient. With an
// adapter the gradient is aligned with adapter.values and the base parameters
// receive nothing.
LossAndGrad backward(const ModelParams& params, std::span<const TrainSample> batch,
                     const LoraAdapter* adapter = nullptr);

// Text checkpoint: `key=value` config header, layout table, then the values
// at 17 significant digits. Round-trips bit-exactly.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

void save_adapter(const LoraAdapter& adapter, const std::filesystem::path& path);
LoraAdapter load_adapter(const std::filesystem::path& path);

}  // namespace antlab
