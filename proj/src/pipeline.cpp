#include "antlab/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>

#include "antlab/csv.hpp"
#include "antlab/parallel.hpp"
#include "antlab/svg_plot.hpp"

namespace antlab {

namespace fs = std::filesystem;

std::vector<SweepRow> sweep_tprime(const ModelParams& params, const NoiseSchedule& schedule, const MixtureSpec& oracle,
                                   int target, const std::vector<int>& grid, int n, double scale,
                                   std::uint64_t seed, int threshold_draws) {
  require(target >= 0 && target < oracle.n_concepts, "sweep: target concept out of range");
  const double threshold = manifold_threshold(oracle, derive_seed(seed, "threshold"), threshold_draws);
  const auto conds = eval_conds(params.config(), target, n);
  std::vector<SweepRow> rows(grid.size());
  parallel_for(static_cast<int>(grid.size()), [&](int i) {
    GuidanceSpec g;
    g.scale = scale;
    g.t_prime = grid[i];
    g.validate(schedule);
    // same initial noise at every grid point, so rows differ only by t'
    const Points x = sample(params, schedule, g, conds, derive_seed(seed, "sweep"), false).points;
    int hits = 0;
    for (int j = 0; j < x.cols(); ++j) hits += bayes_classify(oracle, x.col(j)) == target;
    rows[i] = {grid[i], static_cast<double>(hits) / n, off_manifold_fraction(x, oracle, threshold)};
  });
  return rows;
}

void write_sweep_csv(const std::vector<SweepRow>& rows, const fs::path& path) {
  std::string s = "t_prime,frac_classified_as_target,off_manifold_frac\n";
  for (const auto& r : rows) {
    s += std::to_string(r.t_prime) + ',' + format_double(r.frac_target) + ',' + format_double(r.off_manifold) + '\n';
  }
  write_file_atomic(path, s);
}

namespace {

fs::path at(const RunConfig& cfg, const char* name) { return cfg.run_dir / name; }

ModelParams load_required(const RunConfig& cfg, const char* name) {
  const fs::path p = at(cfg, name);
  if (!fs::exists(p)) throw RuntimeFailure("missing " + p.string() + "; run the stage that produces it first");
  return load_checkpoint(p);
}

Dataset load_data(const RunConfig& cfg) {
  const fs::path p = at(cfg, artifact::data);
  if (!fs::exists(p)) throw RuntimeFailure("missing " + p.string() + "; run gen-data first");
  return read_dataset_csv(cfg.mixture(), p);
}

EvalReport eval_model(const RunConfig& cfg, const ModelParams& params, const std::vector<int>& erased) {
  return evaluate(params, cfg.schedule.make(), cfg.mixture(), erased, cfg.eval.eval);
}

}  // namespace

std::vector<int> erased_concepts(const RunConfig& cfg) {
  return cfg.fuse.concepts.empty() ? std::vector<int>{cfg.ant.target} : cfg.fuse.concepts;
}

void write_resolved_config(const RunConfig& cfg) {
  write_file_atomic(at(cfg, artifact::config), resolved_config_text(cfg));
}

void stage_gen_data(const RunConfig& cfg) {
  const Dataset data = sample_dataset(cfg.mixture(), cfg.data.n_points, derive_seed(cfg.seed, "data"));
  write_dataset_csv(data, at(cfg, artifact::data));
}

void stage_pretrain(const RunConfig& cfg) {
  const Dataset data = load_data(cfg);
  try {
    const PretrainResult r = pretrain(cfg.net, cfg.schedule.make(), data, cfg.pretrain);
    save_checkpoint(r.params, at(cfg, artifact::pretrained));
    write_loss_csv(r.loss_curve, at(cfg, artifact::pretrain_loss));
  } catch (const TrainingDiverged& e) {
    const fs::path partial = at(cfg, "pretrained.last_good.ckpt");
    save_checkpoint(e.last_good, partial);
    throw RuntimeFailure(std::string(e.what()) + "; last finite parameters saved to " + partial.string());
  }
}

void stage_sweep(const RunConfig& cfg) {
  const ModelParams params = load_required(cfg, artifact::pretrained);
  const auto rows = sweep_tprime(params, cfg.schedule.make(), cfg.mixture(), cfg.ant.target, cfg.eval.sweep_grid,
                                 cfg.eval.sweep_samples, cfg.eval.eval.guidance.scale, cfg.eval.eval.seed,
                                 cfg.eval.eval.threshold_draws);
  write_sweep_csv(rows, at(cfg, artifact::sweep));
}

void stage_trajectories(const RunConfig& cfg) {
  const ModelParams params = load_required(cfg, artifact::pretrained);
  std::vector<Cond> conds;
  for (int i = 0; i < cfg.eval.n_chains; ++i) conds.push_back(Cond::of(i % cfg.data.n_concepts, i % cfg.data.n_contexts));
  const auto out = sample(params, cfg.schedule.make(), cfg.eval.eval.guidance, conds,
                          derive_seed(cfg.eval.eval.seed, "trajectories"), true);
  write_trajectory_csv(out, at(cfg, artifact::trajectories));
}

void stage_saliency(const RunConfig& cfg) {
  const ModelParams params = load_required(cfg, artifact::pretrained);
  const ModelParams frozen = clone_frozen(params);
  const ConceptMask cm = build_concept_mask(params, frozen, cfg.schedule.make(), cfg.ant.target, cfg.saliency);
  save_mask(cm.mask, at(cfg, artifact::mask));
  write_saliency_curve_csv(cm.curve, at(cfg, artifact::saliency_curve));
  log_info("saliency: " + std::to_string(cm.mask.active()) + " of " + std::to_string(cm.mask.size()) +
           " parameters active after " + std::to_string(cm.mask.n_maps) + " maps");
}

namespace {
EraseResult run_erase(const RunConfig& cfg, const ModelParams& params, const AntLossConfig& loss) {
  std::optional<SaliencyMask> mask;
  if (cfg.ant.use_saliency) {
    const fs::path p = at(cfg, artifact::mask);
    if (!fs::exists(p)) throw RuntimeFailure("missing " + p.string() + "; run saliency first or set ant.use_saliency = false");
    mask = load_mask(p);
  }
  std::optional<Dataset> data;
  if (loss.latent_source == LatentSource::noised_data) data = load_data(cfg);
  return erase_single(params, cfg.schedule.make(), cfg.ant.target, loss, mask ? &*mask : nullptr,
                      data ? &*data : nullptr);
}
}  // namespace

void stage_erase(const RunConfig& cfg) {
  const ModelParams params = load_required(cfg, artifact::pretrained);
  const EraseResult r = run_erase(cfg, params, cfg.ant.loss);
  if (r.frozen_checksum_before != r.frozen_checksum_after) {
    throw RuntimeFailure("erase: frozen teacher changed during finetuning");
  }
  save_checkpoint(r.params, at(cfg, artifact::erased));
  write_erase_log_csv(r.log, at(cfg, artifact::erase_log));
}

void stage_erase_multi(const RunConfig& cfg) {
  require(!cfg.fuse.concepts.empty(), "erase-multi: fuse.concepts is empty");
  const ModelParams params = load_required(cfg, artifact::pretrained);
  const NoiseSchedule schedule = cfg.schedule.make();
  const MultiResult r = erase_multi(params, schedule, cfg.fuse.concepts, cfg.fuse.multi);
  save_checkpoint(r.params, at(cfg, artifact::erased));
  for (const auto& a : r.adapters) {
    save_adapter(a, cfg.run_dir / ("adapter_" + std::to_string(a.concept_id) + ".txt"));
  }
  const auto& e = cfg.eval.eval;
  const auto before = accuracy(params, schedule, e.guidance, cfg.fuse.concepts, e.n_samples, e.seed, cfg.mixture());
  const auto after = accuracy(r.params, schedule, e.guidance, cfg.fuse.concepts, e.n_samples, e.seed, cfg.mixture());
  std::vector<FusionReportRow> rows;
  for (std::size_t i = 0; i < cfg.fuse.concepts.size(); ++i) rows.push_back({cfg.fuse.concepts[i], before[i], after[i]});
  write_fusion_report_csv(rows, at(cfg, artifact::fusion_report));
  log_info("fusion objective " + format_double(r.objective));
}

void stage_eval(const RunConfig& cfg) {
  const ModelParams params = load_required(cfg, artifact::erased);
  const EvalReport rep = eval_model(cfg, params, erased_concepts(cfg));
  write_eval_report_csv(rep, at(cfg, artifact::eval_report));
  write_eval_schema(at(cfg, artifact::eval_schema));
}

void stage_summary(const RunConfig& cfg) {
  const fs::path p = at(cfg, artifact::eval_report);
  if (!fs::exists(p)) throw RuntimeFailure("missing " + p.string() + "; run eval first");
  const CsvTable t = read_csv(p);
  const std::size_t last = t.rows.size() - 1;
  std::string erased;
  for (int k : erased_concepts(cfg)) erased += (erased.empty() ? "" : " ") + std::to_string(k);
  CsvTable s;
  s.header = {"metric", "value"};
  s.rows = {{"mode", cfg.fuse.concepts.empty() ? "single" : "multi"},
            {"erased", erased},
            {"acc_e", t.rows[last][t.column("acc_e")]},
            {"acc_p", t.rows[last][t.column("acc_p")]},
            {"h_c", t.rows[last][t.column("h_c")]},
            {"off_manifold_frac", t.rows[last][t.column("off_manifold_frac")]},
            {"w2_preserved_mean", t.rows[last][t.column("w2")]},
            {"seed", std::to_string(cfg.seed)}};
  write_csv(at(cfg, artifact::summary), s);
}

void stage_plot(const RunConfig& cfg) { plot_run_dir(cfg.run_dir); }

std::vector<AblationRow> stage_ablate(const RunConfig& cfg) {
  require(cfg.fuse.concepts.empty(), "ablate: runs on the single-concept setting; clear fuse.concepts");
  const ModelParams params = load_required(cfg, artifact::pretrained);
  const std::vector<Variant> variants{Variant::A, Variant::B, Variant::C, Variant::D, Variant::E, Variant::full};
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    AntLossConfig loss = cfg.ant.loss;
    loss.terms = terms_for(v);
    const EraseResult r = run_erase(cfg, params, loss);
    const EvalReport rep = eval_model(cfg, r.params, {cfg.ant.target});
    rows.push_back({v, rep.acc_e, rep.acc_p, rep.h_c, rep.off_manifold_frac});
    log_info("ablation " + to_string(v) + ": H_c " + format_double(rep.h_c));
  }
  CsvTable t;
  t.header = {"variant", "acc_e", "acc_p", "h_c", "off_manifold_frac"};
  for (const auto& r : rows) {
    t.rows.push_back({to_string(r.variant), format_double(r.acc_e), format_double(r.acc_p), format_double(r.h_c),
                      format_double(r.off_manifold)});
  }
  write_csv(at(cfg, artifact::ablation), t);
  return rows;
}

namespace {

struct Stage {
  std::string name;
  std::vector<std::string> key_prefixes;  // config keys this stage reads
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::function<void(const RunConfig&)> run;
};

std::uint64_t file_checksum(const fs::path& p) {
  const std::string s = read_file(p);
  return fnv1a(s.data(), s.size());
}

std::string stage_key(const RunConfig& cfg, const Stage& st) {
  std::string material = st.name + '\n';
  std::istringstream in(resolved_config_text(cfg));
  std::string line;
  while (std::getline(in, line)) {
    for (const auto& pre : st.key_prefixes) {
      if (line.rfind(pre, 0) == 0) {
        material += line + '\n';
        break;
      }
    }
  }
  for (const auto& f : st.inputs) material += f + ' ' + hex64(file_checksum(cfg.run_dir / f)) + '\n';
  return hex64(fnv1a(material.data(), material.size()));
}

fs::path stamp_path(const RunConfig& cfg, const Stage& st) { return cfg.run_dir / "stamps" / (st.name + ".stamp"); }

bool up_to_date(const RunConfig& cfg, const Stage& st, const std::string& key) {
  const fs::path sp = stamp_path(cfg, st);
  if (!fs::exists(sp)) return false;
  std::istringstream in(read_file(sp));
  std::string line;
  if (!std::getline(in, line) || line != "key " + key) return false;
  std::map<std::string, std::string> recorded;
  std::string file, sum;
  while (in >> file >> sum) recorded[file] = sum;
  for (const auto& f : st.outputs) {
    const fs::path p = cfg.run_dir / f;
    if (!fs::exists(p) || recorded[f] != hex64(file_checksum(p))) return false;
  }
  return true;
}

void write_stamp(const RunConfig& cfg, const Stage& st, const std::string& key) {
  std::string s = "key " + key + '\n';
  for (const auto& f : st.outputs) s += f + ' ' + hex64(file_checksum(cfg.run_dir / f)) + '\n';
  write_file_atomic(stamp_path(cfg, st), s);
}

std::vector<Stage> pipeline_stages(const RunConfig& cfg) {
  using namespace artifact;
  const bool multi = !cfg.fuse.concepts.empty();
  std::vector<Stage> st;
  st.push_back({"gen-data", {"seed ", "data."}, {}, {data}, stage_gen_data});
  st.push_back({"pretrain", {"seed ", "net.", "schedule.", "pretrain."}, {data}, {pretrained, pretrain_loss},
                stage_pretrain});
  st.push_back({"sweep-tprime", {"seed ", "schedule.", "eval.", "ant.target"}, {pretrained}, {sweep}, stage_sweep});
  st.push_back({"trajectories", {"seed ", "schedule.", "eval."}, {pretrained}, {trajectories}, stage_trajectories});
  std::vector<std::string> erase_inputs{pretrained};
  if (!multi && cfg.ant.use_saliency) {
    st.push_back({"saliency", {"seed ", "schedule.", "saliency.", "ant."}, {pretrained}, {mask, saliency_curve},
                  stage_saliency});
    erase_inputs.push_back(mask);
  }
  if (!multi && cfg.ant.loss.latent_source == LatentSource::noised_data) erase_inputs.push_back(data);
  if (multi) {
    std::vector<std::string> outs{erased, fusion_report};
    for (int k : cfg.fuse.concepts) outs.push_back("adapter_" + std::to_string(k) + ".txt");
    st.push_back({"erase-multi", {"seed ", "schedule.", "fuse.", "eval."}, {pretrained}, outs, stage_erase_multi});
  } else {
    st.push_back({"erase", {"seed ", "schedule.", "ant."}, erase_inputs, {erased, erase_log}, stage_erase});
  }
  st.push_back({"eval", {"seed ", "schedule.", "eval.", "ant.target", "fuse.concepts"}, {erased},
                {eval_report, eval_schema}, stage_eval});
  st.push_back({"summary", {"seed ", "fuse.concepts", "ant.target"}, {eval_report}, {summary}, stage_summary});
  std::vector<std::string> plot_in{pretrain_loss, sweep, trajectories, data};
  std::vector<std::string> plot_out{"pretrain_loss.svg", "sweep_tprime.svg", "trajectories.svg"};
  if (!multi && cfg.ant.use_saliency) plot_in.push_back(saliency_curve), plot_out.push_back("saliency_curve.svg");
  st.push_back({"plot", {}, plot_in, plot_out, stage_plot});
  return st;
}

}  // namespace

std::vector<StageOutcome> run_pipeline(const RunConfig& cfg, bool force) {
  cfg.validate();
  fs::create_directories(cfg.run_dir);
  write_resolved_config(cfg);
  std::vector<StageOutcome> outcomes;
  std::string last_good = "(none)";
  for (const Stage& st : pipeline_stages(cfg)) {
    try {
      const std::string key = stage_key(cfg, st);
      if (!force && up_to_date(cfg, st, key)) {
        log_info("stage " + st.name + ": up to date, skipped");
        outcomes.push_back({st.name, false});
      } else {
        const auto t0 = std::chrono::steady_clock::now();
        st.run(cfg);
        write_stamp(cfg, st, key);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.1f", secs);
        log_info("stage " + st.name + ": done in " + buf + " s");
        outcomes.push_back({st.name, true});
      }
    } catch (const InvalidInput& e) {
      throw InvalidInput("stage " + st.name + " failed: " + e.what() + " (last good artifact: " + last_good + ")");
    } catch (const std::exception& e) {
      throw RuntimeFailure("stage " + st.name + " failed: " + e.what() + " (last good artifact: " + last_good + ")");
    }
    if (!st.outputs.empty()) last_good = (cfg.run_dir / st.outputs.front()).string();
  }
  return outcomes;
}

}  // namespace antlab
