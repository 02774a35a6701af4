#include "antlab/synth_data.hpp"

#include <cmath>
#include <limits>

#include "antlab/csv.hpp"

namespace antlab {

void MixtureSpec::validate() const {
  require(n_concepts >= 1 && n_contexts >= 1, "mixture: vocabularies must be non-empty");
  require(mode_std > 0.0 && std::isfinite(mode_std), "mixture: mode_std must be positive");
  require(static_cast<int>(centers.size()) == n_modes(), "mixture: every (concept, context) needs a center");
  require(static_cast<int>(weights.size()) == n_modes(), "mixture: weight count mismatch");
  double total = 0.0;
  for (double w : weights) {
    require(w >= 0.0, "mixture: negative weight");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-12, "mixture: weights must sum to 1");
}

MixtureSpec make_mixture(int n_concepts, int n_contexts, double radius_base, double std) {
  require(n_concepts >= 2, "make_mixture: n_concepts must be >= 2");
  require(n_contexts >= 1, "make_mixture: n_contexts must be >= 1");
  require(std > 0.0, "make_mixture: std must be positive");
  require(radius_base > 0.0, "make_mixture: radius_base must be positive");

  MixtureSpec spec;
  spec.n_concepts = n_concepts;
  spec.n_contexts = n_contexts;
  spec.mode_std = std;
  spec.centers.resize(spec.n_modes());
  spec.weights.assign(spec.n_modes(), 1.0 / spec.n_modes());
  for (int k = 0; k < n_concepts; ++k) {
    const double theta = 2.0 * M_PI * k / n_concepts;
    for (int c = 0; c < n_contexts; ++c) {
      const double r = radius_base * (1.0 + c / 2.0);
      spec.centers[spec.mode_index(k, c)] = Vec2(r * std::cos(theta), r * std::sin(theta));
    }
  }
  return spec;
}

Dataset sample_dataset(const MixtureSpec& spec, int n, std::uint64_t seed) {
  spec.validate();
  require(n >= 1, "sample_dataset: n must be >= 1");

  std::vector<double> cumulative(spec.n_modes());
  double acc = 0.0;
  for (int m = 0; m < spec.n_modes(); ++m) {
    acc += spec.weights[m];
    cumulative[m] = acc;
  }

  Dataset data;
  data.spec = spec;
  data.seed = seed;
  data.points.reserve(n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform() * acc;
    int mode = 0;
    while (mode + 1 < spec.n_modes() && cumulative[mode] <= u) ++mode;
    const Vec2 noise = rng.normal2();
    LabeledPoint p;
    p.concept_id = mode / spec.n_contexts;
    p.context_id = mode % spec.n_contexts;
    p.x = spec.centers[mode] + spec.mode_std * noise;
    data.points.push_back(p);
  }
  return data;
}

namespace {
double log_mode_term(const MixtureSpec& spec, int mode, const Vec2& x) {
  const double var = spec.mode_std * spec.mode_std;
  const double d2 = (x - spec.centers[mode]).squaredNorm();
  if (spec.weights[mode] <= 0.0) return -std::numeric_limits<double>::infinity();
  return std::log(spec.weights[mode]) - std::log(2.0 * M_PI * var) - 0.5 * d2 / var;
}

double log_sum_exp(const std::vector<double>& terms) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double t : terms) hi = std::max(hi, t);
  if (!std::isfinite(hi)) return hi;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - hi);
  return hi + std::log(s);
}
}  // namespace

std::vector<double> concept_log_densities(const MixtureSpec& spec, const Vec2& x) {
  std::vector<double> out(spec.n_concepts);
  std::vector<double> terms(spec.n_contexts);
  for (int k = 0; k < spec.n_concepts; ++k) {
    for (int c = 0; c < spec.n_contexts; ++c) terms[c] = log_mode_term(spec, spec.mode_index(k, c), x);
    out[k] = log_sum_exp(terms);
  }
  return out;
}

int bayes_classify(const MixtureSpec& spec, const Vec2& x) {
  const auto per_concept = concept_log_densities(spec, x);
  int best = 0;
  for (int k = 1; k < spec.n_concepts; ++k) {
    if (per_concept[k] > per_concept[best]) best = k;
  }
  return best;
}

double log_density(const MixtureSpec& spec, const Vec2& x) {
  std::vector<double> terms(spec.n_modes());
  for (int m = 0; m < spec.n_modes(); ++m) terms[m] = log_mode_term(spec, m, x);
  return log_sum_exp(terms);
}

void write_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::string out = "x,y,concept,context\n";
  for (const auto& p : data.points) {
    out += format_double(p.x.x()) + ',' + format_double(p.x.y()) + ',' + std::to_string(p.concept_id) +
           ',' + std::to_string(p.context_id) + '\n';
  }
  write_file_atomic(path, out);
}

Dataset read_dataset_csv(const MixtureSpec& spec, const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  Dataset data;
  data.spec = spec;
  data.points.reserve(table.rows.size());
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    LabeledPoint p;
    p.x = Vec2(table.number(r, "x"), table.number(r, "y"));
    p.concept_id = static_cast<int>(table.number(r, "concept"));
    p.context_id = static_cast<int>(table.number(r, "context"));
    if (p.concept_id < 0 || p.concept_id >= spec.n_concepts || p.context_id < 0 || p.context_id >= spec.n_contexts) {
      throw RuntimeFailure("dataset " + path.string() + ": label out of vocabulary on row " +
                           std::to_string(r + 1));
    }
    data.points.push_back(p);
  }
  return data;
}

}  // namespace antlab
