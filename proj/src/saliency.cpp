#include "antlab/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "antlab/csv.hpp"
#include "antlab/parallel.hpp"

namespace antlab {

std::size_t SaliencyMask::active() const {
  return static_cast<std::size_t>(std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; }));
}

void SaliencyConfig::validate() const {
  require(n_prompts >= 1 && n_seeds >= 1, "saliency: n_prompts and n_seeds must be >= 1");
  require(gamma_quantile > 0.0 && gamma_quantile < 1.0, "saliency: gamma_quantile must lie in (0, 1)");
  require(latents_per_map >= 1, "saliency: latents_per_map must be >= 1");
}

double quantile_threshold(std::span<const double> grad, double q) {
  require(!grad.empty(), "quantile_threshold: empty gradient");
  require(q > 0.0 && q < 1.0, "quantile_threshold: q must lie in (0, 1)");
  std::vector<double> mag(grad.size());
  std::transform(grad.begin(), grad.end(), mag.begin(), [](double g) { return std::abs(g); });
  const auto n = mag.size();
  auto keep = static_cast<std::size_t>(std::ceil((1.0 - q) * static_cast<double>(n) - 1e-9));
  keep = std::clamp<std::size_t>(keep, 1, n);
  auto nth = mag.begin() + static_cast<std::ptrdiff_t>(n - keep);
  std::nth_element(mag.begin(), nth, mag.end());
  return *nth;
}

std::vector<std::uint8_t> threshold_mask(std::span<const double> grad, double gamma) {
  std::vector<std::uint8_t> bits(grad.size());
  for (std::size_t i = 0; i < grad.size(); ++i) bits[i] = std::abs(grad[i]) >= gamma ? 1 : 0;
  return bits;
}

namespace {
std::string quantile_rule(double q) { return "quantile q=" + format_double(q) + " of |grad| per map"; }
}  // namespace

SaliencyMask single_map(const ModelParams& params, const ModelParams& frozen, const NoiseSchedule& schedule,
                        int target, int context, std::uint64_t seed, const AntLossConfig& loss_cfg, double q) {
  const NetConfig& net = params.config();
  require(context >= 0 && context < net.n_contexts, "saliency: context id out of range");
  require(target >= 0 && target < net.n_concepts, "saliency: target concept out of range");
  Rng rng(seed);
  const auto res = ant_loss(params, frozen, schedule, Cond::of(target, context), loss_cfg, rng);
  if (std::all_of(res.grad.begin(), res.grad.end(), [](double g) { return g == 0.0; })) {
    throw RuntimeFailure("saliency: all-zero gradient for context " + std::to_string(context) + ", seed " +
                         std::to_string(seed) + " (degenerate map)");
  }
  double gamma = quantile_threshold(res.grad, q);
  SaliencyMask m;
  if (gamma > 0.0) {
    m.bits = threshold_mask(res.grad, gamma);
  } else {
    // Mostly-zero gradient: keep every coordinate that moved at all.
    m.bits.resize(res.grad.size());
    for (std::size_t i = 0; i < res.grad.size(); ++i) m.bits[i] = res.grad[i] != 0.0;
  }
  m.n_maps = 1;
  m.gamma_rule = quantile_rule(q);
  m.prompts = {context};
  m.seeds = {seed};
  return m;
}

SaliencyMask intersect(std::span<const SaliencyMask> masks) {
  require(!masks.empty(), "intersect: need at least one mask");
  SaliencyMask out = masks[0];
  for (std::size_t k = 1; k < masks.size(); ++k) {
    const auto& m = masks[k];
    require(m.size() == out.size(), "intersect: mask lengths differ");
    for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] &= m.bits[i];
    out.n_maps += m.n_maps;
    out.prompts.insert(out.prompts.end(), m.prompts.begin(), m.prompts.end());
    out.seeds.insert(out.seeds.end(), m.seeds.begin(), m.seeds.end());
  }
  return out;
}

ConceptMask build_concept_mask(const ModelParams& params, const ModelParams& frozen, const NoiseSchedule& schedule,
                               int target, const SaliencyConfig& cfg) {
  cfg.validate();
  require(params.config().n_contexts >= cfg.n_prompts, "saliency: context vocabulary smaller than n_prompts");
  const int n = cfg.n_prompts * cfg.n_seeds;
  AntLossConfig loss = cfg.loss;
  loss.batch = cfg.latents_per_map;
  std::vector<SaliencyMask> maps(n);
  parallel_for(n, [&](int k) {
    const int prompt = k % cfg.n_prompts;
    const int s = k / cfg.n_prompts;
    maps[k] = single_map(params, frozen, schedule, target, prompt,
                         derive_seed(cfg.seed, "saliency", static_cast<std::uint64_t>(s)), loss,
                         cfg.gamma_quantile);
  });

  ConceptMask out;
  out.mask = maps[0];
  out.curve.push_back({1, out.mask.active()});
  for (int k = 1; k < n; ++k) {
    out.mask = intersect(std::vector<SaliencyMask>{out.mask, maps[k]});
    out.curve.push_back({k + 1, out.mask.active()});
  }
  if (out.mask.active() == 0) {
    log_warn("saliency: intersection of " + std::to_string(n) +
             " maps is empty; falling back to the union of the per-map masks");
    for (const auto& m : maps) {
      for (std::size_t i = 0; i < m.bits.size(); ++i) out.mask.bits[i] |= m.bits[i];
    }
    out.mask.gamma_rule = quantile_rule(cfg.gamma_quantile) + ", union fallback";
    out.fallback = true;
  }
  return out;
}

void masked_update(std::span<double> params, std::span<const double> grad, MaskedAdam& opt, double lr) {
  opt.step(params, grad, lr);
}

void save_mask(const SaliencyMask& mask, const std::filesystem::path& path) {
  std::ostringstream s;
  s << "antlab-mask 1\n";
  s << "size=" << mask.size() << '\n';
  s << "active=" << mask.active() << '\n';
  s << "n_maps=" << mask.n_maps << '\n';
  s << "gamma_rule=" << mask.gamma_rule << '\n';
  s << "prompts=";
  for (std::size_t i = 0; i < mask.prompts.size(); ++i) s << (i ? "," : "") << mask.prompts[i];
  s << "\nseeds=";
  for (std::size_t i = 0; i < mask.seeds.size(); ++i) s << (i ? "," : "") << mask.seeds[i];
  s << "\nrle";
  std::uint8_t cur = 0;
  std::size_t run = 0;
  for (auto b : mask.bits) {
    const std::uint8_t v = b ? 1 : 0;
    if (v == cur) {
      ++run;
    } else {
      s << ' ' << run;
      cur = v;
      run = 1;
    }
  }
  s << ' ' << run << '\n';
  write_file_atomic(path, s.str());
}

namespace {
std::string header_value(std::istream& in, const std::string& key, const std::filesystem::path& path) {
  std::string line;
  if (!std::getline(in, line) || line.rfind(key + "=", 0) != 0) {
    throw RuntimeFailure("mask file " + path.string() + ": expected '" + key + "='");
  }
  return line.substr(key.size() + 1);
}

template <class T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(static_cast<T>(std::stoull(item)));
  }
  return out;
}
}  // namespace

SaliencyMask load_mask(const std::filesystem::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line) || line != "antlab-mask 1") {
    throw RuntimeFailure("not a mask file: " + path.string());
  }
  SaliencyMask m;
  const auto size = std::stoull(header_value(in, "size", path));
  const auto active = std::stoull(header_value(in, "active", path));
  m.n_maps = std::stoi(header_value(in, "n_maps", path));
  m.gamma_rule = header_value(in, "gamma_rule", path);
  m.prompts = parse_list<int>(header_value(in, "prompts", path));
  m.seeds = parse_list<std::uint64_t>(header_value(in, "seeds", path));
  std::string tag;
  in >> tag;
  if (tag != "rle") throw RuntimeFailure("mask file " + path.string() + ": missing rle section");
  m.bits.reserve(size);
  std::uint8_t cur = 0;
  std::size_t run;
  while (in >> run) {
    m.bits.insert(m.bits.end(), run, cur);
    cur ^= 1;
  }
  if (m.bits.size() != size || m.active() != active) {
    throw RuntimeFailure("mask file " + path.string() + ": run lengths do not match the header");
  }
  return m;
}

void write_saliency_curve_csv(const std::vector<CurvePoint>& curve, const std::filesystem::path& path) {
  std::string s = "n_maps,active_params\n";
  for (const auto& p : curve) s += std::to_string(p.n_maps) + ',' + std::to_string(p.active) + '\n';
  write_file_atomic(path, s);
}

}  // namespace antlab
