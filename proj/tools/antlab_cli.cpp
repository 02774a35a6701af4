#include <CLI11.hpp>

#include <iostream>

#include "antlab/csv.hpp"
#include "antlab/pipeline.hpp"
#include "antlab/svg_plot.hpp"

using namespace antlab;

namespace {

struct Common {
  std::string config;
  std::string run_dir;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool force = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "flat key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--run-dir", c.run_dir, "output directory (overrides run_dir)");
  cmd->add_option("--seed", c.seed, "global seed (overrides seed)")->each([&c](const std::string&) { c.seed_given = true; });
  cmd->add_option("--set", c.sets, "extra key=value override, repeatable");
  cmd->add_flag("--force", c.force, "rerun stages even when their artifacts are current");
  cmd->add_flag("--quiet", c.quiet, "suppress progress messages");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (!c.run_dir.empty()) cfg.run_dir = c.run_dir;
  if (c.seed_given) cfg.seed = c.seed;
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw InvalidInput("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.finalize();
  cfg.validate();
  std::filesystem::create_directories(cfg.run_dir);
  write_resolved_config(cfg);
  set_log_quiet(c.quiet);
  return cfg;
}

void print_csv(const std::filesystem::path& p) { std::cout << read_file(p); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"concept erasure lab on a 2-D conditional diffusion toy"};
  app.require_subcommand(1);
  Common c;
  std::string grid;
  int target = -1, concept_id = 0, n = 1000, t_prime = 0;
  double scale = 3.0;
  std::string model = "pretrained", concepts;

  auto* gen = app.add_subcommand("gen-data", "sample the mixture dataset");
  auto* pre = app.add_subcommand("pretrain", "train the conditional noise predictor");
  auto* sal = app.add_subcommand("saliency", "build the intersected saliency mask for ant.target");
  auto* era = app.add_subcommand("erase", "erase ant.target by finetuning");
  auto* mul = app.add_subcommand("erase-multi", "per-concept LoRA then closed-form fusion");
  mul->add_option("--concepts", concepts, "comma list, overrides fuse.concepts");
  auto* abl = app.add_subcommand("ablate", "loss-term ablation grid A..E, full");
  auto* smp = app.add_subcommand("sample", "draw samples from a checkpoint");
  smp->add_option("--model", model, "pretrained or erased")->check(CLI::IsMember({"pretrained", "erased"}));
  smp->add_option("--concept", concept_id, "concept to condition on");
  smp->add_option("-n,--n", n, "number of samples")->check(CLI::PositiveNumber);
  smp->add_option("--scale", scale, "guidance scale");
  smp->add_option("--t-prime", t_prime, "ladder reversal step");
  auto* swp = app.add_subcommand("sweep-tprime", "reversed-guidance sweep on the pretrained model");
  swp->add_option("--grid", grid, "comma list of ladder steps, overrides eval.sweep_grid");
  swp->add_option("--target", target, "concept, overrides ant.target");
  auto* evl = app.add_subcommand("eval", "evaluate erased.ckpt");
  auto* plt = app.add_subcommand("plot", "render SVGs from the CSVs in the run directory");
  auto* pip = app.add_subcommand("pipeline", "gen-data through eval, skipping current stages");
  for (auto* cmd : {gen, pre, sal, era, mul, abl, smp, swp, evl, plt, pip}) add_common(cmd, c);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (mul->parsed() && !concepts.empty()) c.sets.push_back("fuse.concepts=" + concepts);
    if (swp->parsed()) {
      if (!grid.empty()) c.sets.push_back("eval.sweep_grid=" + grid);
      if (target >= 0) c.sets.push_back("ant.target=" + std::to_string(target));
    }
    const RunConfig cfg = resolve(c);

    if (gen->parsed()) {
      stage_gen_data(cfg);
    } else if (pre->parsed()) {
      stage_pretrain(cfg);
    } else if (sal->parsed()) {
      stage_saliency(cfg);
      print_csv(cfg.run_dir / artifact::saliency_curve);
    } else if (era->parsed()) {
      require(cfg.fuse.concepts.empty(), "erase: fuse.concepts is set; use erase-multi");
      stage_erase(cfg);
    } else if (mul->parsed()) {
      stage_erase_multi(cfg);
      print_csv(cfg.run_dir / artifact::fusion_report);
    } else if (abl->parsed()) {
      stage_ablate(cfg);
      print_csv(cfg.run_dir / artifact::ablation);
    } else if (smp->parsed()) {
      const ModelParams params = load_checkpoint(cfg.run_dir / (model + ".ckpt"));
      require(concept_id >= 0 && concept_id < cfg.data.n_concepts, "sample: --concept out of range");
      const NoiseSchedule sch = cfg.schedule.make();
      GuidanceSpec g = cfg.eval.eval.guidance;
      g.scale = scale;
      g.t_prime = t_prime;
      g.validate(sch);
      const auto conds = eval_conds(params.config(), concept_id, n);
      const auto out = sample(params, sch, g, conds, derive_seed(cfg.seed, "cli-sample"), false);
      write_samples_csv(out.points, conds, cfg.run_dir / artifact::samples);
    } else if (swp->parsed()) {
      stage_sweep(cfg);
      plot_sweep(cfg.run_dir / artifact::sweep, cfg.run_dir / "sweep_tprime.svg");
      print_csv(cfg.run_dir / artifact::sweep);
    } else if (evl->parsed()) {
      stage_eval(cfg);
      stage_summary(cfg);
      print_csv(cfg.run_dir / artifact::summary);
    } else if (plt->parsed()) {
      for (const auto& p : plot_run_dir(cfg.run_dir)) std::cout << p.string() << '\n';
    } else if (pip->parsed()) {
      for (const auto& o : run_pipeline(cfg, c.force)) {
        std::cout << o.stage << ' ' << (o.ran ? "ran" : "skipped") << '\n';
      }
      print_csv(cfg.run_dir / artifact::summary);
    }
  } catch (const InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
