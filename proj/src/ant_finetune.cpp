#include "antlab/ant_finetune.hpp"

#include <algorithm>
#include <cmath>

#include "antlab/adam.hpp"
#include "antlab/csv.hpp"
#include "antlab/pretrainer.hpp"
#include "antlab/saliency.hpp"

namespace antlab {

std::string to_string(LatentSource s) {
  return s == LatentSource::teacher_partial_ddim ? "teacher_partial_ddim" : "noised_data";
}

LatentSource parse_latent_source(const std::string& s) {
  if (s == "teacher_partial_ddim") return LatentSource::teacher_partial_ddim;
  if (s == "noised_data") return LatentSource::noised_data;
  throw InvalidInput("unknown latent source '" + s + "'");
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::A: return "A";
    case Variant::B: return "B";
    case Variant::C: return "C";
    case Variant::D: return "D";
    case Variant::E: return "E";
    case Variant::full: return "full";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::A, Variant::B, Variant::C, Variant::D, Variant::E, Variant::full}) {
    if (to_string(v) == s) return v;
  }
  throw InvalidInput("unknown ablation variant '" + s + "' (expected A, B, C, D, E or full)");
}

LossTerms terms_for(Variant v) {
  // preserve, erase (late), erase_all, uncond_early, uncond_late
  switch (v) {
    case Variant::A: return {false, true, true, false, false};
    case Variant::B: return {false, true, true, true, true};
    case Variant::C: return {false, true, false, false, false};
    case Variant::D: return {false, true, false, false, true};
    case Variant::E: return {true, true, false, false, false};
    case Variant::full: return {true, true, false, true, true};
  }
  return {};
}

void AntLossConfig::validate(const NoiseSchedule& schedule) const {
  require(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0, "ant: lambdas must be >= 0");
  require(std::isfinite(eta), "ant: eta must be finite");
  require(t_prime_train >= 0 && t_prime_train <= schedule.T(), "ant: t_prime_train must lie in [0, T]");
  require(steps >= 0, "ant: steps must be >= 0");
  require(batch >= 1, "ant: batch must be >= 1");
  require(lr > 0.0, "ant: lr must be positive");
  require(teacher_scale >= 0.0, "ant: teacher_scale must be >= 0");
  require(n_infer_steps >= 1 && n_infer_steps <= schedule.T(), "ant: n_infer_steps must lie in [1, T]");
}

int t_prime_to_train(int t_prime, int n_infer_steps, int T) {
  require(n_infer_steps >= 1 && t_prime >= 0 && t_prime <= n_infer_steps, "t_prime must lie in [0, n_infer_steps]");
  return static_cast<int>((static_cast<long long>(t_prime) * T + n_infer_steps - 1) / n_infer_steps);
}

namespace {

// Runs the teacher's guided DDIM for all requests as one batch along the
// ladder. A stop between two ladder points is read off with a single DDIM step
// from the ladder point above it; the chain itself stays on the ladder.
void teacher_chains(const ModelParams& frozen, const NoiseSchedule& schedule, std::span<const LatentRequest> reqs,
                    const AntLossConfig& cfg, std::vector<LatentPair>& out) {
  const int n = static_cast<int>(reqs.size());
  GuidanceSpec g;
  g.scale = cfg.teacher_scale;
  g.t_prime = cfg.teacher_t_prime;
  g.n_infer_steps = cfg.n_infer_steps;
  std::vector<Cond> conds(n);
  Points z(2, n);
  int lowest = schedule.T();
  for (int b = 0; b < n; ++b) {
    conds[b] = reqs[b].cond;
    z.col(b) = initial_noise(1, reqs[b].seed).col(0);
    for (int t : {reqs[b].t1, reqs[b].t2}) {
      if (t) lowest = std::min(lowest, t);
    }
  }
  const auto predict = guided_predictor(frozen, schedule, g, conds);
  const auto ladder = schedule.ladder(cfg.n_infer_steps);

  for (int i = cfg.n_infer_steps; i >= 1; --i) {
    const int t = ladder[i];
    const int tn = ladder[i - 1];
    for (int b = 0; b < n; ++b) {
      if (reqs[b].t1 == t) out[b].z1 = z.col(b);
      if (reqs[b].t2 == t) out[b].z2 = z.col(b);
    }
    if (lowest >= t) break;
    const Points eps = predict(z, t, i);
    for (int b = 0; b < n; ++b) {
      if (reqs[b].t1 > tn && reqs[b].t1 < t) out[b].z1 = ddim_step(schedule, Vec2(z.col(b)), t, reqs[b].t1, eps.col(b));
      if (reqs[b].t2 > tn && reqs[b].t2 < t) out[b].z2 = ddim_step(schedule, Vec2(z.col(b)), t, reqs[b].t2, eps.col(b));
    }
    ddim_step(schedule, z, t, tn, eps);
    if (!z.allFinite()) throw RuntimeFailure("make_latents: non-finite latent at t=" + std::to_string(tn));
  }
  for (const auto& p : out) {
    if (!p.z1.allFinite() || !p.z2.allFinite()) throw RuntimeFailure("make_latents: non-finite latent");
  }
}

const LabeledPoint& draw_data_point(const Dataset* data, const Cond& cond, Rng& rng) {
  require(data != nullptr && !data->points.empty(), "make_latent: noised_data mode needs a dataset");
  std::vector<std::size_t> match;
  for (std::size_t i = 0; i < data->points.size(); ++i) {
    const auto& p = data->points[i];
    if ((!cond.concept_id || p.concept_id == *cond.concept_id) &&
        (!cond.context_id || p.context_id == *cond.context_id)) {
      match.push_back(i);
    }
  }
  if (match.empty()) throw RuntimeFailure("make_latent: no data point matches the condition");
  return data->points[match[rng.uniform_int(0, static_cast<int>(match.size()) - 1)]];
}

}  // namespace

std::vector<LatentPair> make_latent_pairs(const ModelParams& frozen, const NoiseSchedule& schedule,
                                          std::span<const LatentRequest> reqs, const AntLossConfig& cfg,
                                          const Dataset* data) {
  std::vector<LatentPair> out(reqs.size());
  for (std::size_t b = 0; b < reqs.size(); ++b) {
    const auto& r = reqs[b];
    require(r.t1 >= 0 && r.t1 <= schedule.T() && r.t2 >= 0 && r.t2 <= schedule.T(),
            "make_latents: timesteps must lie in [1, T] (0 = unused)");
    out[b].cond = r.cond;
    out[b].t1 = r.t1;
    out[b].t2 = r.t2;
  }
  if (cfg.latent_source == LatentSource::noised_data) {
    for (std::size_t b = 0; b < reqs.size(); ++b) {
      Rng rng(reqs[b].seed);
      const auto& p = draw_data_point(data, reqs[b].cond, rng);
      const Vec2 e1 = rng.normal2();
      const Vec2 e2 = rng.normal2();
      if (reqs[b].t1) out[b].z1 = forward_noise(schedule, p.x, reqs[b].t1, e1);
      if (reqs[b].t2) out[b].z2 = forward_noise(schedule, p.x, reqs[b].t2, e2);
    }
  } else if (!reqs.empty()) {
    teacher_chains(frozen, schedule, reqs, cfg, out);
  }
  return out;
}

Vec2 make_latent(const ModelParams& frozen, const NoiseSchedule& schedule, const Cond& cond, int t,
                 std::uint64_t seed, const AntLossConfig& cfg, const Dataset* data) {
  require(t >= 1 && t <= schedule.T(), "make_latent: t must lie in [1, T]");
  const LatentRequest req{cond, t, 0, seed};
  return make_latent_pairs(frozen, schedule, std::span(&req, 1), cfg, data)[0].z1;
}

std::pair<int, int> draw_timesteps(const NoiseSchedule& schedule, const AntLossConfig& cfg, Rng& rng) {
  const int T = schedule.T();
  const int tp = cfg.t_prime_train;
  const int t1 = tp < T ? rng.uniform_int(tp + 1, T) : 0;
  int t2 = 0;
  if (cfg.terms.erase_all) {
    t2 = rng.uniform_int(1, T);
  } else if (tp >= 1) {
    t2 = rng.uniform_int(1, tp);
  }
  return {t1, t2};
}

AntLossResult ant_loss(const ModelParams& live, const ModelParams& frozen, const NoiseSchedule& schedule,
                       std::span<const LatentPair> pairs, const AntLossConfig& cfg, const LoraAdapter* adapter) {
  require(!pairs.empty(), "ant_loss: no latents");
  const LossTerms& on = cfg.terms;
  const double T = schedule.T();

  // Column plan: for each live term, one live column and the teacher columns
  // its target needs.
  enum Kind { preserve, erase, uncond_early, uncond_late };
  struct Column {
    Kind kind;
    std::size_t pair;
  };
  std::vector<Column> cols;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    if (pairs[p].t1) {
      if (on.preserve) cols.push_back({preserve, p});
      if (on.uncond_early) cols.push_back({uncond_early, p});
    }
    if (pairs[p].t2) {
      if (on.erase) cols.push_back({erase, p});
      if (on.uncond_late) cols.push_back({uncond_late, p});
    }
  }

  AntLossResult result;
  result.t1 = pairs[0].t1;
  result.t2 = pairs[0].t2;
  result.grad.assign(adapter ? adapter->values.size() : live.size(), 0.0);
  if (cols.empty()) return result;

  const int n = static_cast<int>(cols.size());
  Points z(2, n);
  std::vector<double> ts(n);
  std::vector<Cond> live_cond(n);
  // Teacher evaluates every column both unconditionally and conditionally.
  Points tz(2, 2 * n);
  std::vector<double> tts(2 * n);
  std::vector<Cond> tcond(2 * n, Cond::null());
  for (int j = 0; j < n; ++j) {
    const auto& pr = pairs[cols[j].pair];
    const bool early = cols[j].kind == preserve || cols[j].kind == uncond_early;
    z.col(j) = early ? pr.z1 : pr.z2;
    ts[j] = (early ? pr.t1 : pr.t2) / T;
    const bool conditional = cols[j].kind == preserve || cols[j].kind == erase;
    live_cond[j] = conditional ? pr.cond : Cond::null();
    tz.col(j) = z.col(j);
    tz.col(n + j) = z.col(j);
    tts[j] = tts[n + j] = ts[j];
    tcond[n + j] = pr.cond;
  }

  const ForwardPass teacher(frozen, tz, tts, tcond);
  const Points& ty = teacher.output();
  const ForwardPass student(live, z, ts, live_cond, adapter);
  const Points& y = student.output();

  const double inv_b = 1.0 / static_cast<double>(pairs.size());
  Points d_out(2, n);
  double sums[4] = {0, 0, 0, 0};
  for (int j = 0; j < n; ++j) {
    const Vec2 eps_u = ty.col(j);
    const Vec2 delta = ty.col(n + j) - eps_u;
    Vec2 target;
    double w = 1.0;
    switch (cols[j].kind) {
      case preserve: target = eps_u + cfg.eta * delta; w = 1.0; break;
      case erase: target = eps_u - cfg.eta * delta; w = cfg.lambda1; break;
      case uncond_early: target = eps_u; w = cfg.lambda2; break;
      case uncond_late: target = eps_u; w = cfg.lambda3; break;
    }
    const Vec2 r = y.col(j) - target;
    sums[cols[j].kind] += r.squaredNorm();
    d_out.col(j) = 2.0 * w * inv_b * r;
  }

  auto& t = result.terms;
  t.preserve = sums[preserve] * inv_b;
  t.erase = sums[erase] * inv_b;
  t.uncond_early = sums[uncond_early] * inv_b;
  t.uncond_late = sums[uncond_late] * inv_b;
  t.total = t.preserve + cfg.lambda1 * t.erase + cfg.lambda2 * t.uncond_early + cfg.lambda3 * t.uncond_late;
  if (adapter) {
    student.backward_adapter(d_out, result.grad);
  } else {
    student.backward(d_out, result.grad);
  }
  return result;
}

AntLossResult ant_loss(const ModelParams& live, const ModelParams& frozen, const NoiseSchedule& schedule,
                       const Cond& cond, const AntLossConfig& cfg, Rng& rng, const LoraAdapter* adapter,
                       const Dataset* data) {
  std::vector<LatentRequest> reqs;
  reqs.reserve(cfg.batch);
  for (int b = 0; b < cfg.batch; ++b) {
    const auto [t1, t2] = draw_timesteps(schedule, cfg, rng);
    reqs.push_back({cond, t1, t2, rng.next_u64()});
  }
  const auto pairs = make_latent_pairs(frozen, schedule, reqs, cfg, data);
  return ant_loss(live, frozen, schedule, pairs, cfg, adapter);
}

Cond erase_prompt(const NetConfig& net, int target, Rng& rng) {
  return Cond::of(target, rng.uniform_int(0, net.n_contexts - 1));
}

EraseResult erase_single(const ModelParams& pretrained, const NoiseSchedule& schedule, int target,
                         const AntLossConfig& cfg, const SaliencyMask* mask, const Dataset* data) {
  cfg.validate(schedule);
  const NetConfig& net = pretrained.config();
  require(target >= 0 && target < net.n_concepts, "erase: target concept out of range");
  if (mask) require(mask->size() == pretrained.size(), "erase: mask length does not match the parameter count");
  if (cfg.t_prime_train == schedule.T()) log_info("erase: t' = T, the early-range terms are skipped");
  if (cfg.t_prime_train == 0 && !cfg.terms.erase_all) log_info("erase: t' = 0, the late-range terms are skipped");

  const ModelParams frozen = clone_frozen(pretrained);
  EraseResult result{writable_copy(pretrained), {}, frozen.checksum(), 0};

  std::optional<Adam> adam;
  std::optional<MaskedAdam> masked;
  if (mask) {
    masked.emplace(mask->bits);
  } else {
    adam.emplace(pretrained.size());
  }

  Rng rng(derive_seed(cfg.seed, "ant-erase"));
  for (int step = 0; step < cfg.steps; ++step) {
    const Cond cond = erase_prompt(net, target, rng);
    auto res = ant_loss(result.params, frozen, schedule, cond, cfg, rng, nullptr, data);
    if (!std::isfinite(res.terms.total)) {
      throw TrainingDiverged("erase diverged at step " + std::to_string(step), result.params, step);
    }
    if (masked) {
      masked_update(result.params.mutable_flat(), res.grad, *masked, cfg.lr);
    } else {
      adam->step(result.params.mutable_flat(), res.grad, cfg.lr);
    }
    result.log.push_back({step + 1, res.t1, res.t2, res.terms});
  }
  result.frozen_checksum_after = frozen.checksum();
  return result;
}

void write_erase_log_csv(const std::vector<EraseLogRow>& log, const std::filesystem::path& path) {
  std::string s = "step,t1,t2,L_preserve,L_erase,L_uncond_early,L_uncond_late,total\n";
  for (const auto& r : log) {
    s += std::to_string(r.step) + ',' + std::to_string(r.t1) + ',' + std::to_string(r.t2) + ',' +
         format_double(r.terms.preserve) + ',' + format_double(r.terms.erase) + ',' +
         format_double(r.terms.uncond_early) + ',' + format_double(r.terms.uncond_late) + ',' +
         format_double(r.terms.total) + '\n';
  }
  write_file_atomic(path, s);
}

}  // namespace antlab
