#include "antlab/eval_metrics.hpp"

#include <algorithm>
#include <cmath>

#include "antlab/csv.hpp"
#include "antlab/parallel.hpp"

namespace antlab {

double harmonic_mean_hc(double acc_e, double acc_p) {
  require(acc_e >= 0.0 && acc_e <= 1.0 && acc_p >= 0.0 && acc_p <= 1.0, "H_c: accuracies must lie in [0, 1]");
  if (acc_e >= 1.0 || acc_p <= 0.0) return 0.0;
  return 2.0 / (1.0 / (1.0 - acc_e) + 1.0 / acc_p);
}

std::vector<Cond> eval_conds(const NetConfig& net, int concept_id, int n) {
  std::vector<Cond> conds(n);
  for (int i = 0; i < n; ++i) conds[i] = Cond::of(concept_id, i % net.n_contexts);
  return conds;
}

namespace {
Points concept_samples(const ModelParams& params, const NoiseSchedule& schedule, const GuidanceSpec& guidance,
                       int concept_id, int n, std::uint64_t seed, const LoraAdapter* adapter) {
  const auto conds = eval_conds(params.config(), concept_id, n);
  return sample(params, schedule, guidance, conds, derive_seed(seed, "eval", concept_id), false, adapter).points;
}

double hit_rate(const Points& x, const MixtureSpec& oracle, int concept_id) {
  int hits = 0;
  for (int i = 0; i < x.cols(); ++i) hits += bayes_classify(oracle, x.col(i)) == concept_id;
  return static_cast<double>(hits) / static_cast<double>(x.cols());
}
}  // namespace

std::vector<double> accuracy(const ModelParams& params, const NoiseSchedule& schedule, const GuidanceSpec& guidance,
                             std::span<const int> concepts, int n, std::uint64_t seed, const MixtureSpec& oracle,
                             const LoraAdapter* adapter) {
  require(n >= 100, "accuracy: need at least 100 samples per concept");
  std::vector<double> acc(concepts.size());
  parallel_for(static_cast<int>(concepts.size()), [&](int j) {
    acc[j] = hit_rate(concept_samples(params, schedule, guidance, concepts[j], n, seed, adapter), oracle, concepts[j]);
  });
  return acc;
}

double manifold_threshold(const MixtureSpec& oracle, std::uint64_t seed, int n_draws, double percentile) {
  require(n_draws >= 1 && percentile > 0.0 && percentile < 1.0, "manifold_threshold: bad draw count or percentile");
  const Dataset ref = sample_dataset(oracle, n_draws, seed);
  std::vector<double> ld(ref.points.size());
  for (std::size_t i = 0; i < ld.size(); ++i) ld[i] = log_density(oracle, ref.points[i].x);
  const auto k = static_cast<std::size_t>(std::floor(percentile * static_cast<double>(ld.size())));
  std::nth_element(ld.begin(), ld.begin() + static_cast<std::ptrdiff_t>(k), ld.end());
  return ld[k];
}

double off_manifold_fraction(const Points& samples, const MixtureSpec& oracle, double threshold) {
  require(samples.cols() >= 1, "off_manifold_fraction: no samples");
  int off = 0;
  for (int i = 0; i < samples.cols(); ++i) off += log_density(oracle, samples.col(i)) < threshold;
  return static_cast<double>(off) / static_cast<double>(samples.cols());
}

namespace {
void fit_gaussian(const Points& x, Vec2& mu, Eigen::Matrix2d& cov) {
  mu = x.rowwise().mean();
  const Points c = x.colwise() - mu;
  cov = c * c.transpose() / static_cast<double>(x.cols() - 1);
  if (cov.determinant() <= 1e-18 * std::max(1.0, cov.trace() * cov.trace())) {
    log_warn("w2_gaussian: degenerate covariance, adding 1e-9 I");
    cov += 1e-9 * Eigen::Matrix2d::Identity();
  }
}
}  // namespace

double w2_gaussian(const Points& a, const Points& b) {
  require(a.cols() >= 2 && b.cols() >= 2, "w2_gaussian: need at least 2 samples per set");
  Vec2 mu_a, mu_b;
  Eigen::Matrix2d s_a, s_b;
  fit_gaussian(a, mu_a, s_a);
  fit_gaussian(b, mu_b, s_b);
  // For 2x2 PSD M, tr sqrt(M) = sqrt(tr M + 2 sqrt(det M)); here M is similar
  // to s_a s_b.
  const Eigen::Matrix2d m = s_a * s_b;
  const double det = std::max(0.0, m.determinant());
  const double tr_sqrt = std::sqrt(std::max(0.0, m.trace() + 2.0 * std::sqrt(det)));
  const double w2 = (mu_a - mu_b).squaredNorm() + s_a.trace() + s_b.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, w2);
}

void EvalConfig::validate(const NoiseSchedule& schedule) const {
  require(n_samples >= 100, "eval: n_samples must be >= 100");
  require(threshold_draws >= 100, "eval: threshold_draws must be >= 100");
  guidance.validate(schedule);
}

EvalReport evaluate(const ModelParams& params, const NoiseSchedule& schedule, const MixtureSpec& oracle,
                    std::span<const int> erased, const EvalConfig& cfg, const LoraAdapter* adapter) {
  cfg.validate(schedule);
  const int K = oracle.n_concepts;
  require(params.config().n_concepts == K, "eval: model and oracle vocabularies differ");
  for (int k : erased) require(k >= 0 && k < K, "eval: erased concept out of range");

  const double threshold = manifold_threshold(oracle, derive_seed(cfg.seed, "threshold"), cfg.threshold_draws);
  EvalReport report;
  report.n_samples = cfg.n_samples;
  report.seed = cfg.seed;
  report.guidance = cfg.guidance;
  report.rows.resize(K);
  std::vector<Points> samples(K);
  parallel_for(K, [&](int k) {
    samples[k] = concept_samples(params, schedule, cfg.guidance, k, cfg.n_samples, cfg.seed, adapter);
    auto& row = report.rows[k];
    row.concept_id = k;
    row.erased = std::find(erased.begin(), erased.end(), k) != erased.end();
    row.acc = hit_rate(samples[k], oracle, k);
    row.off_manifold_frac = off_manifold_fraction(samples[k], oracle, threshold);

    // Reference draws of the same concept, spread over contexts like the samples.
    Rng rng(derive_seed(cfg.seed, "w2-reference", k));
    Points ref(2, cfg.n_samples);
    for (int i = 0; i < cfg.n_samples; ++i) {
      ref.col(i) = oracle.center(k, i % oracle.n_contexts) + oracle.mode_std * rng.normal2();
    }
    row.w2 = w2_gaussian(samples[k], ref);
  });

  double sum_e = 0.0, sum_p = 0.0, off = 0.0;
  int n_e = 0, n_p = 0;
  for (const auto& r : report.rows) {
    (r.erased ? sum_e : sum_p) += r.acc;
    (r.erased ? n_e : n_p) += 1;
    off += r.off_manifold_frac;
  }
  report.acc_e = n_e ? sum_e / n_e : 0.0;
  report.acc_p = n_p ? sum_p / n_p : 0.0;
  report.h_c = harmonic_mean_hc(report.acc_e, report.acc_p);
  report.off_manifold_frac = off / K;
  return report;
}

void write_eval_report_csv(const EvalReport& r, const std::filesystem::path& path) {
  CsvTable t;
  t.header = {"concept", "role",  "acc",     "off_manifold_frac", "w2",           "acc_e",
              "acc_p",   "h_c",   "n_samples", "seed",            "guidance_scale", "t_prime"};
  auto tail = [&](std::vector<std::string> row) {
    for (auto v : {format_double(r.acc_e), format_double(r.acc_p), format_double(r.h_c),
                   std::to_string(r.n_samples), std::to_string(r.seed), format_double(r.guidance.scale),
                   std::to_string(r.guidance.t_prime)}) {
      row.push_back(v);
    }
    return row;
  };
  double w2_p = 0.0;
  int n_p = 0;
  for (const auto& c : r.rows) {
    t.rows.push_back(tail({std::to_string(c.concept_id), c.erased ? "erased" : "preserved", format_double(c.acc),
                           format_double(c.off_manifold_frac), format_double(c.w2)}));
    if (!c.erased) w2_p += c.w2, ++n_p;
  }
  t.rows.push_back(tail({"all", "aggregate", "", format_double(r.off_manifold_frac),
                         format_double(n_p ? w2_p / n_p : 0.0)}));
  write_csv(path, t);
}

void write_eval_schema(const std::filesystem::path& path) {
  write_file_atomic(path,
                    "eval_report.csv columns\n"
                    "concept            concept id, or 'all' for the aggregate row\n"
                    "role               erased | preserved | aggregate\n"
                    "acc                fraction of samples the Bayes oracle assigns to the conditioned concept\n"
                    "off_manifold_frac  fraction of samples whose mixture log-density is below the 1st\n"
                    "                   percentile of oracle draws (stand-in for artifact/FID-style checks);\n"
                    "                   the aggregate row holds the mean over concepts\n"
                    "w2                 squared 2-Wasserstein distance between Gaussians fitted to the samples\n"
                    "                   and to oracle draws of the same concept (FID stand-in); the aggregate\n"
                    "                   row holds the mean over preserved concepts\n"
                    "acc_e              mean acc over erased concepts (0 when none)\n"
                    "acc_p              unweighted mean acc over preserved concepts\n"
                    "h_c                2 / (1/(1 - acc_e) + 1/acc_p)\n"
                    "n_samples          samples per concept; chain i uses context i mod n_contexts\n"
                    "seed               evaluation seed\n"
                    "guidance_scale     CFG scale s used for sampling\n"
                    "t_prime            ladder reversal step used for sampling (0 = ordinary CFG)\n");
}

}  // namespace antlab
