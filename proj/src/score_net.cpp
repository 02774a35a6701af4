#include "antlab/score_net.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "antlab/csv.hpp"

namespace antlab {

std::string to_string(Activation a) { return a == Activation::silu ? "silu" : "tanh"; }

Activation parse_activation(const std::string& s) {
  if (s == "silu" || s == "swish") return Activation::silu;
  if (s == "tanh") return Activation::tanh;
  throw InvalidInput("unknown activation '" + s + "'");
}

void NetConfig::validate() const {
  require(hidden_width >= 1 && n_hidden_layers >= 1 && cond_embed_dim >= 1, "net: all dims must be >= 1");
  require(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "net: time_embed_dim must be even and >= 2");
  require(n_concepts >= 1 && n_contexts >= 1, "net: vocabularies must be non-empty");
}

std::vector<ParamBlock> make_layout(const NetConfig& c) {
  c.validate();
  std::vector<ParamBlock> layout;
  std::size_t offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    layout.push_back({std::move(name), offset, rows, cols});
    offset += static_cast<std::size_t>(rows) * cols;
  };
  const int h = c.hidden_width;
  add("emb_concept", c.n_concepts + 1, c.cond_embed_dim);
  add("emb_context", c.n_contexts + 1, c.cond_embed_dim);
  add("W_z", h, 2);
  add("W_t", h, c.time_embed_dim);
  add("W_c", h, c.cond_embed_dim);
  add("b_1", h, 1);
  for (int l = 2; l <= c.n_hidden_layers; ++l) {
    add("W_" + std::to_string(l), h, h);
    add("b_" + std::to_string(l), h, 1);
  }
  add("W_out", 2, h);
  add("b_out", 2, 1);
  return layout;
}

ModelParams::ModelParams(NetConfig config) : config_(config), layout_(make_layout(config)) {
  flat_.assign(layout_.back().offset + layout_.back().size(), 0.0);
}

ModelParams ModelParams::initialize(const NetConfig& config, std::uint64_t seed) {
  ModelParams p(config);
  Rng rng(seed);
  for (const auto& b : p.layout_) {
    double scale = 0.0;
    if (b.name.rfind("emb_", 0) == 0) {
      scale = 1.0;
    } else if (b.name == "W_out") {
      // Zero output layer: the untrained net predicts no noise, so its samples
      // are an isotropic blow-up of z_T rather than a drift toward one concept.
      scale = 0.0;
    } else if (b.name.rfind("W_", 0) == 0) {
      int fan_in = b.cols;
      // W_z, W_t and W_c feed one pre-activation together.
      if (b.name == "W_z" || b.name == "W_t" || b.name == "W_c") {
        fan_in = 2 + config.time_embed_dim + config.cond_embed_dim;
      }
      scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
      p.flat_[b.offset + i] = scale == 0.0 ? 0.0 : scale * rng.normal();
    }
  }
  return p;
}

const ParamBlock& ModelParams::block(const std::string& name) const {
  for (const auto& b : layout_) {
    if (b.name == name) return b;
  }
  throw InvalidInput("no parameter block named '" + name + "'");
}

std::vector<double>& ModelParams::mutable_flat() {
  if (read_only_) throw RuntimeFailure("attempt to modify a frozen (read-only) parameter clone");
  return flat_;
}

Eigen::Map<const RowMatrix> ModelParams::matrix(const std::string& name) const {
  const auto& b = block(name);
  return {flat_.data() + b.offset, b.rows, b.cols};
}

Eigen::Map<RowMatrix> ModelParams::mutable_matrix(const std::string& name) {
  const auto& b = block(name);
  return {mutable_flat().data() + b.offset, b.rows, b.cols};
}

namespace {
int concept_row(const NetConfig& c, const Cond& cond) {
  if (!cond.concept_id) return c.null_concept();
  if (*cond.concept_id < 0 || *cond.concept_id >= c.n_concepts) {
    throw InvalidInput("concept id " + std::to_string(*cond.concept_id) + " out of vocabulary");
  }
  return *cond.concept_id;
}

int context_row(const NetConfig& c, const Cond& cond) {
  if (!cond.context_id) return c.null_context();
  if (*cond.context_id < 0 || *cond.context_id >= c.n_contexts) {
    throw InvalidInput("context id " + std::to_string(*cond.context_id) + " out of vocabulary");
  }
  return *cond.context_id;
}
}  // namespace

Eigen::VectorXd ModelParams::embedding(const Cond& cond) const {
  return (matrix("emb_concept").row(concept_row(config_, cond)) +
          matrix("emb_context").row(context_row(config_, cond)))
      .transpose();
}

ModelParams clone_frozen(const ModelParams& params) {
  ModelParams copy = params;
  copy.read_only_ = true;
  return copy;
}

ModelParams writable_copy(const ModelParams& params) {
  ModelParams copy = params;
  copy.read_only_ = false;
  return copy;
}

std::map<std::string, RowMatrix> unflatten(const ModelParams& params) {
  std::map<std::string, RowMatrix> out;
  for (const auto& b : params.layout()) out.emplace(b.name, params.matrix(b.name));
  return out;
}

std::vector<double> flatten(const NetConfig& config, const std::map<std::string, RowMatrix>& tensors) {
  const auto layout = make_layout(config);
  std::vector<double> flat(layout.back().offset + layout.back().size());
  for (const auto& b : layout) {
    auto it = tensors.find(b.name);
    require(it != tensors.end(), "flatten: missing tensor " + b.name);
    require(it->second.rows() == b.rows && it->second.cols() == b.cols, "flatten: shape mismatch for " + b.name);
    Eigen::Map<RowMatrix>(flat.data() + b.offset, b.rows, b.cols) = it->second;
  }
  return flat;
}

LoraAdapter LoraAdapter::create(const NetConfig& config, int rank, std::uint64_t seed) {
  require(rank >= 1, "lora: rank must be >= 1");
  LoraAdapter a;
  a.rank = rank;
  a.rows = config.hidden_width;
  a.cols = config.cond_embed_dim;
  a.values.assign(a.down_size() + static_cast<std::size_t>(a.rows) * rank, 0.0);
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(a.cols));
  for (std::size_t i = 0; i < a.down_size(); ++i) a.values[i] = scale * rng.normal();
  return a;  // up = 0, so delta() = 0
}

Eigen::Map<const RowMatrix> LoraAdapter::down() const { return {values.data(), rank, cols}; }
Eigen::Map<const RowMatrix> LoraAdapter::up() const { return {values.data() + down_size(), rows, rank}; }
Eigen::MatrixXd LoraAdapter::delta() const { return up() * down(); }

Eigen::VectorXd time_features(int dim, double t_norm) {
  Eigen::VectorXd f(dim);
  double freq = 1.0;
  for (int j = 0; j < dim / 2; ++j) {
    f(2 * j) = std::sin(M_PI * freq * t_norm);
    f(2 * j + 1) = std::cos(M_PI * freq * t_norm);
    freq *= 2.0;
  }
  return f;
}

namespace {
void activate(Activation a, const Eigen::MatrixXd& pre, Eigen::MatrixXd& out) {
  if (a == Activation::silu) {
    out = pre.array() / (1.0 + (-pre.array()).exp());
  } else {
    out = pre.array().tanh();
  }
}

// d act / d pre, evaluated from the pre-activation and the activation.
Eigen::MatrixXd activation_slope(Activation a, const Eigen::MatrixXd& pre, const Eigen::MatrixXd& act) {
  if (a == Activation::silu) {
    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-pre.array()).exp());
    return (s * (1.0 + pre.array() * (1.0 - s))).matrix();
  }
  return (1.0 - act.array().square()).matrix();
}

Eigen::Map<RowMatrix> grad_block(std::span<double> grad, const ParamBlock& b) {
  return {grad.data() + b.offset, b.rows, b.cols};
}
}  // namespace

ForwardPass::ForwardPass(const ModelParams& params, const Points& z, std::span<const double> t_norm,
                         std::span<const Cond> cond, const LoraAdapter* adapter)
    : params_(params), adapter_(adapter), z_(z) {
  const NetConfig& c = params.config();
  const int n = static_cast<int>(z.cols());
  require(n >= 1, "forward: empty batch");
  require(static_cast<int>(t_norm.size()) == n && static_cast<int>(cond.size()) == n,
          "forward: batch arrays must have equal length");
  if (adapter) {
    require(adapter->rows == c.hidden_width && adapter->cols == c.cond_embed_dim,
            "forward: adapter shape does not match W_c");
  }

  time_.resize(c.time_embed_dim, n);
  emb_.resize(c.cond_embed_dim, n);
  concept_rows_.resize(n);
  context_rows_.resize(n);
  const auto e_concept = params.matrix("emb_concept");
  const auto e_context = params.matrix("emb_context");
  for (int i = 0; i < n; ++i) {
    require(t_norm[i] >= 0.0 && t_norm[i] <= 1.0, "forward: t_norm must lie in [0, 1]");
    time_.col(i) = time_features(c.time_embed_dim, t_norm[i]);
    concept_rows_[i] = concept_row(c, cond[i]);
    context_rows_[i] = context_row(c, cond[i]);
    emb_.col(i) = (e_concept.row(concept_rows_[i]) + e_context.row(context_rows_[i])).transpose();
  }

  const int layers = c.n_hidden_layers;
  pre_.resize(layers);
  act_.resize(layers);

  Eigen::MatrixXd w_c = params.matrix("W_c");
  if (adapter) w_c += adapter->delta();
  pre_[0] = params.matrix("W_z") * z_ + params.matrix("W_t") * time_ + w_c * emb_;
  pre_[0].colwise() += Eigen::Map<const Eigen::VectorXd>(params.flat().data() + params.block("b_1").offset,
                                                         c.hidden_width);
  activate(c.activation, pre_[0], act_[0]);
  for (int l = 1; l < layers; ++l) {
    const std::string id = std::to_string(l + 1);
    pre_[l] = params.matrix("W_" + id) * act_[l - 1];
    pre_[l].colwise() += Eigen::Map<const Eigen::VectorXd>(
        params.flat().data() + params.block("b_" + id).offset, c.hidden_width);
    activate(c.activation, pre_[l], act_[l]);
  }
  output_ = params.matrix("W_out") * act_.back();
  output_.colwise() += Eigen::Map<const Eigen::Vector2d>(params.flat().data() + params.block("b_out").offset);
}

// Reverse sweep down to the first pre-activation. When d_pre is non-null the
// per-layer gradients of the pre-activations are kept for weight updates.
Eigen::MatrixXd ForwardPass::first_layer_grad(const Points& d_output,
                                              std::vector<Eigen::MatrixXd>* d_pre) const {
  const NetConfig& c = params_.config();
  require(d_output.cols() == output_.cols(), "backward: d_output batch mismatch");
  const int layers = c.n_hidden_layers;
  if (d_pre) d_pre->assign(layers, {});
  Eigen::MatrixXd d_act = params_.matrix("W_out").transpose() * d_output;
  for (int l = layers - 1; l >= 0; --l) {
    Eigen::MatrixXd dp = d_act.cwiseProduct(activation_slope(c.activation, pre_[l], act_[l]));
    if (l > 0) d_act = params_.matrix("W_" + std::to_string(l + 1)).transpose() * dp;
    if (d_pre) {
      (*d_pre)[l] = dp;
    } else if (l == 0) {
      return dp;
    }
  }
  return (*d_pre)[0];
}

void ForwardPass::backward(const Points& d_output, std::span<double> grad) const {
  const NetConfig& c = params_.config();
  require(grad.size() == params_.size(), "backward: gradient buffer size mismatch");
  std::vector<Eigen::MatrixXd> d_pre;
  first_layer_grad(d_output, &d_pre);
  const int layers = c.n_hidden_layers;

  grad_block(grad, params_.block("W_out")).noalias() += d_output * act_.back().transpose();
  grad_block(grad, params_.block("b_out")) += d_output.rowwise().sum();
  for (int l = layers - 1; l >= 1; --l) {
    const std::string id = std::to_string(l + 1);
    grad_block(grad, params_.block("W_" + id)).noalias() += d_pre[l] * act_[l - 1].transpose();
    grad_block(grad, params_.block("b_" + id)) += d_pre[l].rowwise().sum();
  }
  const Eigen::MatrixXd& dp1 = d_pre[0];
  grad_block(grad, params_.block("W_z")).noalias() += dp1 * z_.transpose();
  grad_block(grad, params_.block("W_t")).noalias() += dp1 * time_.transpose();
  grad_block(grad, params_.block("W_c")).noalias() += dp1 * emb_.transpose();
  grad_block(grad, params_.block("b_1")) += dp1.rowwise().sum();

  Eigen::MatrixXd w_c = params_.matrix("W_c");
  if (adapter_) w_c += adapter_->delta();
  const Eigen::MatrixXd d_emb = w_c.transpose() * dp1;
  auto g_concept = grad_block(grad, params_.block("emb_concept"));
  auto g_context = grad_block(grad, params_.block("emb_context"));
  for (int i = 0; i < d_emb.cols(); ++i) {
    g_concept.row(concept_rows_[i]) += d_emb.col(i).transpose();
    g_context.row(context_rows_[i]) += d_emb.col(i).transpose();
  }
}

void ForwardPass::backward_adapter(const Points& d_output, std::span<double> grad) const {
  require(adapter_ != nullptr, "backward_adapter: forward pass ran without an adapter");
  require(grad.size() == adapter_->values.size(), "backward_adapter: gradient buffer size mismatch");
  const Eigen::MatrixXd dp1 = first_layer_grad(d_output, nullptr);
  const Eigen::MatrixXd d_delta = dp1 * emb_.transpose();  // h x d_e
  const int r = adapter_->rank;
  Eigen::Map<RowMatrix> g_down(grad.data(), r, adapter_->cols);
  Eigen::Map<RowMatrix> g_up(grad.data() + adapter_->down_size(), adapter_->rows, r);
  g_down.noalias() += adapter_->up().transpose() * d_delta;
  g_up.noalias() += d_delta * adapter_->down().transpose();
}

Vec2 forward(const ModelParams& params, const Vec2& z, double t_norm, const Cond& cond,
             const LoraAdapter* adapter) {
  Points zz(2, 1);
  zz.col(0) = z;
  const double t[1] = {t_norm};
  const Cond cs[1] = {cond};
  ForwardPass pass(params, zz, t, cs, adapter);
  return pass.output().col(0);
}

LossAndGrad backward(const ModelParams& params, std::span<const TrainSample> batch, const LoraAdapter* adapter) {
  require(!batch.empty(), "backward: empty batch");
  const int n = static_cast<int>(batch.size());
  Points z(2, n), target(2, n);
  std::vector<double> t(n);
  std::vector<Cond> cond(n);
  for (int i = 0; i < n; ++i) {
    z.col(i) = batch[i].z;
    target.col(i) = batch[i].target;
    t[i] = batch[i].t_norm;
    cond[i] = batch[i].cond;
  }
  ForwardPass pass(params, z, t, cond, adapter);
  const Points diff = pass.output() - target;
  LossAndGrad out;
  out.loss = diff.squaredNorm() / n;
  const Points d_output = (2.0 / n) * diff;
  if (adapter) {
    out.grad.assign(adapter->values.size(), 0.0);
    pass.backward_adapter(d_output, out.grad);
  } else {
    out.grad.assign(params.size(), 0.0);
    pass.backward(d_output, out.grad);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint text format
// ---------------------------------------------------------------------------

namespace {
constexpr const char* kCheckpointMagic = "antlab-checkpoint 1";
constexpr const char* kAdapterMagic = "antlab-adapter 1";

void append_values(std::string& out, const std::vector<double>& values) {
  out += "values " + std::to_string(values.size()) + "\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    out += format_double(values[i]);
    out += (i % 8 == 7 || i + 1 == values.size()) ? '\n' : ' ';
  }
}

std::vector<double> read_values(std::istream& in, const std::string& what) {
  std::string tag;
  std::size_t n = 0;
  if (!(in >> tag >> n) || tag != "values") throw RuntimeFailure(what + ": missing values section");
  std::vector<double> values(n);
  std::string tok;
  for (std::size_t i = 0; i < n; ++i) {
    if (!(in >> tok)) throw RuntimeFailure(what + ": truncated values");
    char* end = nullptr;
    values[i] = std::strtod(tok.c_str(), &end);
    if (*end != '\0') throw RuntimeFailure(what + ": bad number '" + tok + "'");
  }
  return values;
}

std::map<std::string, std::string> read_header(std::istream& in, const std::string& magic,
                                               const std::string& what, const std::string& stop) {
  std::string line;
  if (!std::getline(in, line) || line != magic) throw RuntimeFailure(what + ": bad magic line");
  std::map<std::string, std::string> kv;
  while (in.peek() != EOF) {
    const auto pos = in.tellg();
    if (!std::getline(in, line)) break;
    if (line.rfind(stop, 0) == 0) {
      in.seekg(pos);
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw RuntimeFailure(what + ": bad header line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

int header_int(const std::map<std::string, std::string>& kv, const std::string& key, const std::string& what) {
  auto it = kv.find(key);
  if (it == kv.end()) throw RuntimeFailure(what + ": missing header key " + key);
  return std::stoi(it->second);
}
}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const NetConfig& c = params.config();
  std::string out = std::string(kCheckpointMagic) + "\n";
  out += "hidden_width=" + std::to_string(c.hidden_width) + "\n";
  out += "n_hidden_layers=" + std::to_string(c.n_hidden_layers) + "\n";
  out += "time_embed_dim=" + std::to_string(c.time_embed_dim) + "\n";
  out += "cond_embed_dim=" + std::to_string(c.cond_embed_dim) + "\n";
  out += "n_concepts=" + std::to_string(c.n_concepts) + "\n";
  out += "n_contexts=" + std::to_string(c.n_contexts) + "\n";
  out += "activation=" + to_string(c.activation) + "\n";
  out += "layout " + std::to_string(params.layout().size()) + "\n";
  for (const auto& b : params.layout()) {
    out += b.name + " " + std::to_string(b.offset) + " " + std::to_string(b.rows) + " " + std::to_string(b.cols) + "\n";
  }
  append_values(out, params.flat());
  write_file_atomic(path, out);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  const std::string what = "checkpoint " + path.string();
  std::istringstream in(read_file(path));
  const auto kv = read_header(in, kCheckpointMagic, what, "layout ");
  NetConfig c;
  c.hidden_width = header_int(kv, "hidden_width", what);
  c.n_hidden_layers = header_int(kv, "n_hidden_layers", what);
  c.time_embed_dim = header_int(kv, "time_embed_dim", what);
  c.cond_embed_dim = header_int(kv, "cond_embed_dim", what);
  c.n_concepts = header_int(kv, "n_concepts", what);
  c.n_contexts = header_int(kv, "n_contexts", what);
  auto act = kv.find("activation");
  if (act == kv.end()) throw RuntimeFailure(what + ": missing activation");
  c.activation = parse_activation(act->second);

  ModelParams params(c);
  std::string tag;
  std::size_t n_blocks = 0;
  if (!(in >> tag >> n_blocks) || tag != "layout" || n_blocks != params.layout().size()) {
    throw RuntimeFailure(what + ": layout table does not match the config");
  }
  for (const auto& b : params.layout()) {
    ParamBlock read;
    if (!(in >> read.name >> read.offset >> read.rows >> read.cols) || read.name != b.name ||
        read.offset != b.offset || read.rows != b.rows || read.cols != b.cols) {
      throw RuntimeFailure(what + ": layout entry mismatch at block " + b.name);
    }
  }
  auto values = read_values(in, what);
  if (values.size() != params.size()) throw RuntimeFailure(what + ": value count mismatch");
  params.mutable_flat() = std::move(values);
  return params;
}

void save_adapter(const LoraAdapter& a, const std::filesystem::path& path) {
  std::string out = std::string(kAdapterMagic) + "\n";
  out += "concept_id=" + std::to_string(a.concept_id) + "\n";
  out += "rank=" + std::to_string(a.rank) + "\n";
  out += "target=" + a.target + "\n";
  out += "down_shape=" + std::to_string(a.rank) + "x" + std::to_string(a.cols) + "\n";
  out += "up_shape=" + std::to_string(a.rows) + "x" + std::to_string(a.rank) + "\n";
  append_values(out, a.values);
  write_file_atomic(path, out);
}

LoraAdapter load_adapter(const std::filesystem::path& path) {
  const std::string what = "adapter " + path.string();
  std::istringstream in(read_file(path));
  const auto kv = read_header(in, kAdapterMagic, what, "values ");
  LoraAdapter a;
  a.concept_id = header_int(kv, "concept_id", what);
  a.rank = header_int(kv, "rank", what);
  a.target = kv.count("target") ? kv.at("target") : "W_c";
  const auto up_shape = kv.count("up_shape") ? kv.at("up_shape") : "";
  const auto down_shape = kv.count("down_shape") ? kv.at("down_shape") : "";
  const auto x1 = up_shape.find('x');
  const auto x2 = down_shape.find('x');
  if (x1 == std::string::npos || x2 == std::string::npos) throw RuntimeFailure(what + ": bad shapes");
  a.rows = std::stoi(up_shape.substr(0, x1));
  a.cols = std::stoi(down_shape.substr(x2 + 1));
  a.values = read_values(in, what);
  if (a.values.size() != a.down_size() + static_cast<std::size_t>(a.rows) * a.rank) {
    throw RuntimeFailure(what + ": value count does not match shapes");
  }
  return a;
}

}  // namespace antlab
