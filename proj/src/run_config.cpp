#include "antlab/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

#include "antlab/csv.hpp"

namespace antlab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw InvalidInput("config: '" + key + "' expects a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw InvalidInput("config: '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::istringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_number<int>(key, item));
  }
  return out;
}

std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

struct Binding {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define BIND_INT(k, field)                                                      \
  Binding {                                                                     \
    k, [](const RunConfig& c) { return std::to_string(c.field); },              \
        [](RunConfig& c, const std::string& v) { c.field = parse_number<int>(k, v); } \
  }
#define BIND_DOUBLE(k, field)                                                      \
  Binding {                                                                        \
    k, [](const RunConfig& c) { return format_double(c.field); },                  \
        [](RunConfig& c, const std::string& v) { c.field = parse_number<double>(k, v); } \
  }
#define BIND_BOOL(k, field)                                                   \
  Binding {                                                                   \
    k, [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.field = parse_bool(k, v); }  \
  }

const std::vector<Binding>& bindings() {
  static const std::vector<Binding> table = {
      {"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
       [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); }},
      {"run_dir", [](const RunConfig& c) { return c.run_dir.string(); },
       [](RunConfig& c, const std::string& v) { c.run_dir = v; }},
      BIND_INT("data.n_concepts", data.n_concepts),
      BIND_INT("data.n_contexts", data.n_contexts),
      BIND_DOUBLE("data.radius_base", data.radius_base),
      BIND_DOUBLE("data.mode_std", data.mode_std),
      BIND_INT("data.n_points", data.n_points),
      BIND_INT("net.hidden_width", net.hidden_width),
      BIND_INT("net.n_hidden_layers", net.n_hidden_layers),
      BIND_INT("net.time_embed_dim", net.time_embed_dim),
      BIND_INT("net.cond_embed_dim", net.cond_embed_dim),
      {"net.activation", [](const RunConfig& c) { return to_string(c.net.activation); },
       [](RunConfig& c, const std::string& v) { c.net.activation = parse_activation(v); }},
      BIND_INT("schedule.T", schedule.T),
      BIND_DOUBLE("schedule.beta_start", schedule.beta_start),
      BIND_DOUBLE("schedule.beta_end", schedule.beta_end),
      BIND_INT("schedule.n_infer_steps", schedule.n_infer_steps),
      BIND_INT("pretrain.steps", pretrain.steps),
      BIND_INT("pretrain.batch", pretrain.batch),
      BIND_DOUBLE("pretrain.lr", pretrain.lr),
      BIND_DOUBLE("pretrain.cond_dropout", pretrain.cond_dropout),
      BIND_INT("saliency.n_prompts", saliency.n_prompts),
      BIND_INT("saliency.n_seeds", saliency.n_seeds),
      BIND_DOUBLE("saliency.gamma_quantile", saliency.gamma_quantile),
      BIND_INT("saliency.latents_per_map", saliency.latents_per_map),
      BIND_INT("ant.target", ant.target),
      BIND_INT("ant.t_prime", ant.t_prime),
      {"ant.variant", [](const RunConfig& c) { return to_string(c.ant.variant); },
       [](RunConfig& c, const std::string& v) { c.ant.variant = parse_variant(v); }},
      BIND_BOOL("ant.use_saliency", ant.use_saliency),
      BIND_DOUBLE("ant.lambda1", ant.loss.lambda1),
      BIND_DOUBLE("ant.lambda2", ant.loss.lambda2),
      BIND_DOUBLE("ant.lambda3", ant.loss.lambda3),
      BIND_DOUBLE("ant.eta", ant.loss.eta),
      BIND_INT("ant.steps", ant.loss.steps),
      BIND_INT("ant.batch", ant.loss.batch),
      BIND_DOUBLE("ant.lr", ant.loss.lr),
      {"ant.latent_source", [](const RunConfig& c) { return to_string(c.ant.loss.latent_source); },
       [](RunConfig& c, const std::string& v) { c.ant.loss.latent_source = parse_latent_source(v); }},
      BIND_DOUBLE("ant.teacher_scale", ant.loss.teacher_scale),
      BIND_INT("ant.teacher_t_prime", ant.loss.teacher_t_prime),
      {"fuse.concepts", [](const RunConfig& c) { return join(c.fuse.concepts); },
       [](RunConfig& c, const std::string& v) { c.fuse.concepts = parse_int_list("fuse.concepts", v); }},
      BIND_INT("fuse.rank", fuse.multi.rank),
      BIND_DOUBLE("fuse.beta", fuse.multi.beta),
      BIND_BOOL("fuse.preserve_null", fuse.multi.preserve_null),
      BIND_INT("fuse.t_prime", fuse.t_prime),
      BIND_DOUBLE("fuse.lambda1", fuse.multi.lora.lambda1),
      BIND_DOUBLE("fuse.lambda2", fuse.multi.lora.lambda2),
      BIND_DOUBLE("fuse.lambda3", fuse.multi.lora.lambda3),
      BIND_DOUBLE("fuse.eta", fuse.multi.lora.eta),
      BIND_INT("fuse.steps", fuse.multi.lora.steps),
      BIND_INT("fuse.batch", fuse.multi.lora.batch),
      BIND_DOUBLE("fuse.lr", fuse.multi.lora.lr),
      BIND_DOUBLE("fuse.teacher_scale", fuse.multi.lora.teacher_scale),
      BIND_INT("fuse.teacher_t_prime", fuse.multi.lora.teacher_t_prime),
      BIND_INT("eval.n_samples", eval.eval.n_samples),
      BIND_DOUBLE("eval.scale", eval.eval.guidance.scale),
      BIND_INT("eval.t_prime", eval.eval.guidance.t_prime),
      BIND_INT("eval.threshold_draws", eval.eval.threshold_draws),
      {"eval.sweep_grid", [](const RunConfig& c) { return join(c.eval.sweep_grid); },
       [](RunConfig& c, const std::string& v) { c.eval.sweep_grid = parse_int_list("eval.sweep_grid", v); }},
      BIND_INT("eval.sweep_samples", eval.sweep_samples),
      BIND_INT("eval.n_chains", eval.n_chains),
  };
  return table;
}

#undef BIND_INT
#undef BIND_DOUBLE
#undef BIND_BOOL

}  // namespace

void RunConfig::finalize() {
  net.n_concepts = data.n_concepts;
  net.n_contexts = data.n_contexts;
  pretrain.seed = derive_seed(seed, "pretrain");
  saliency.seed = derive_seed(seed, "saliency-maps");
  ant.loss.seed = derive_seed(seed, "ant");
  ant.loss.n_infer_steps = schedule.n_infer_steps;
  ant.loss.terms = terms_for(ant.variant);
  if (ant.t_prime >= 0 && ant.t_prime <= schedule.n_infer_steps) {
    ant.loss.t_prime_train = t_prime_to_train(ant.t_prime, schedule.n_infer_steps, schedule.T);
  }
  // Saliency maps are gradients of the same loss the erasure minimizes.
  saliency.loss = ant.loss;
  fuse.multi.lora.seed = derive_seed(seed, "lora");
  fuse.multi.lora.n_infer_steps = schedule.n_infer_steps;
  fuse.multi.lora.latent_source = ant.loss.latent_source;
  if (fuse.t_prime >= 0 && fuse.t_prime <= schedule.n_infer_steps) {
    fuse.multi.lora.t_prime_train = t_prime_to_train(fuse.t_prime, schedule.n_infer_steps, schedule.T);
  }
  eval.eval.seed = derive_seed(seed, "eval-run");
  eval.eval.guidance.n_infer_steps = schedule.n_infer_steps;
}

MixtureSpec RunConfig::mixture() const {
  return make_mixture(data.n_concepts, data.n_contexts, data.radius_base, data.mode_std);
}

void RunConfig::validate() const {
  require(!run_dir.empty(), "config: run_dir must not be empty");
  require(data.n_concepts >= 1 && data.n_contexts >= 1, "config: data vocabularies must be non-empty");
  require(data.mode_std > 0.0 && data.radius_base > 0.0, "config: data.mode_std and data.radius_base must be > 0");
  require(data.n_points >= 1, "config: data.n_points must be >= 1");
  net.validate();
  require(schedule.T >= 1 && schedule.n_infer_steps >= 1 && schedule.n_infer_steps <= schedule.T,
          "config: need 1 <= schedule.n_infer_steps <= schedule.T");
  const NoiseSchedule sch = schedule.make();
  pretrain.validate();
  saliency.validate();
  require(ant.target >= 0 && ant.target < data.n_concepts, "config: ant.target out of range");
  require(ant.t_prime >= 0 && ant.t_prime <= schedule.n_infer_steps, "config: ant.t_prime must lie in [0, n_infer_steps]");
  require(fuse.t_prime >= 0 && fuse.t_prime <= schedule.n_infer_steps,
          "config: fuse.t_prime must lie in [0, n_infer_steps]");
  ant.loss.validate(sch);
  fuse.multi.lora.validate(sch);
  require(fuse.multi.rank >= 1 && fuse.multi.beta >= 0.0, "config: fuse.rank >= 1 and fuse.beta >= 0 required");
  for (int k : fuse.concepts) require(k >= 0 && k < data.n_concepts, "config: fuse.concepts entry out of range");
  auto sorted = fuse.concepts;
  std::sort(sorted.begin(), sorted.end());
  require(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end(), "config: fuse.concepts has duplicates");
  eval.eval.validate(sch);
  require(!eval.sweep_grid.empty(), "config: eval.sweep_grid must not be empty");
  for (int t : eval.sweep_grid) {
    require(t >= 0 && t <= schedule.n_infer_steps, "config: eval.sweep_grid entries must lie in [0, n_infer_steps]");
  }
  require(eval.sweep_samples >= 100, "config: eval.sweep_samples must be >= 100");
  require(eval.n_chains >= 1, "config: eval.n_chains must be >= 1");
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& b : bindings()) {
    if (b.key == key) {
      b.set(cfg, value);
      return;
    }
  }
  throw InvalidInput("config: unknown key '" + key + "'");
}

RunConfig parse_config(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw InvalidInput("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    set_config_value(base, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  base.finalize();
  return base;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const RuntimeFailure&) {
    throw InvalidInput("config file " + path.string() + " cannot be read");
  }
  return parse_config(text);
}

std::string resolved_config_text(const RunConfig& cfg) {
  std::string s = "# resolved configuration; derived seeds follow from `seed`\n";
  for (const auto& b : bindings()) s += b.key + " = " + b.get(cfg) + '\n';
  return s;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& b : bindings()) keys.push_back(b.key);
  return keys;
}

}  // namespace antlab
