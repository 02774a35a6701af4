#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "antlab/pipeline.hpp"
#include "antlab/run_config.hpp"
#include "antlab/svg_plot.hpp"

using namespace antlab;
namespace fs = std::filesystem;

namespace {
std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int count(const std::string& s, const std::string& needle) {
  int n = 0;
  for (auto pos = s.find(needle); pos != std::string::npos; pos = s.find(needle, pos + 1)) ++n;
  return n;
}

fs::path scratch(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("antlab_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

const char* kTiny =
    "pretrain.steps = 300\n"
    "data.n_points = 2000\n"
    "saliency.n_seeds = 1\n"
    "saliency.latents_per_map = 16\n"
    "ant.steps = 20\n"
    "eval.n_samples = 100\n"
    "eval.sweep_samples = 100\n"
    "eval.threshold_draws = 2000\n";
}  // namespace

TEST_CASE("config parsing") {
  const auto cfg = parse_config("# comment\nseed = 7\nant.target = 5\nfuse.concepts = 1,4,6\n ant.t_prime=40 \n");
  CHECK(cfg.seed == 7);
  CHECK(cfg.ant.target == 5);
  CHECK(cfg.fuse.concepts == std::vector<int>{1, 4, 6});
  CHECK(cfg.ant.loss.t_prime_train == 80);
  CHECK(cfg.saliency.loss.t_prime_train == 80);

  CHECK_THROWS_AS(parse_config("ant.nonsense = 1\n"), InvalidInput);
  CHECK_THROWS_AS(parse_config("ant.steps = ten\n"), InvalidInput);
  CHECK_THROWS_AS(parse_config("ant.steps\n"), InvalidInput);
  CHECK_THROWS_AS(parse_config("ant.variant = G\n"), InvalidInput);

  const auto text = resolved_config_text(cfg);
  CHECK(resolved_config_text(parse_config(text)) == text);
  for (const auto& k : config_keys()) CHECK(text.find(k + " = ") != std::string::npos);
}

TEST_CASE("svg output") {
  Series s{"loss", {0, 1, 2, 3}, {3, 2, 1.5, 1.2}, true};
  const auto a = line_chart_svg({"t", "x", "y"}, {s});
  CHECK(a == line_chart_svg({"t", "x", "y"}, {s}));
  CHECK(a.rfind("<svg", 0) == 0);
  CHECK(count(a, "<polyline") == 1);

  std::vector<Polyline> paths(5, Polyline{{0, 1, 2}, {0, 1, 0}});
  const auto b = paths_svg({"t", "x", "y"}, {0.5}, {0.5}, paths);
  CHECK(count(b, "<polyline") == 5);

  const auto dir = scratch("svg");
  CHECK_THROWS_WITH_AS(plot_loss(dir / "missing.csv", dir / "x.svg"), doctest::Contains("missing.csv"), RuntimeFailure);
  std::ofstream(dir / "bad.csv") << "a,b\n1,2\n";
  CHECK_THROWS_AS(plot_loss(dir / "bad.csv", dir / "x.svg"), RuntimeFailure);
}

TEST_CASE("pipeline reruns only what changed") {
  const auto dir = scratch("pipeline");
  auto cfg = parse_config(kTiny);
  cfg.run_dir = dir;
  const auto first = run_pipeline(cfg, false);
  for (const auto& o : first) CHECK(o.ran);

  const auto again = run_pipeline(cfg, false);
  for (const auto& o : again) CHECK_MESSAGE(!o.ran, o.stage);

  const auto report = slurp(dir / artifact::eval_report);
  fs::remove(dir / artifact::eval_report);
  const auto third = run_pipeline(cfg, false);
  for (const auto& o : third) CHECK_MESSAGE(o.ran == (o.stage == "eval"), o.stage);
  CHECK(slurp(dir / artifact::eval_report) == report);

  // the trajectory plot has one polyline per dumped chain
  CHECK(count(slurp(dir / "trajectories.svg"), "<polyline") == cfg.eval.n_chains);

  set_config_value(cfg, "ant.steps", "21");
  cfg.finalize();
  const auto fourth = run_pipeline(cfg, false);
  for (const auto& o : fourth) {
    if (o.stage == "gen-data" || o.stage == "pretrain" || o.stage == "sweep-tprime" ||
        o.stage == "trajectories")
      CHECK_MESSAGE(!o.ran, o.stage);
    if (o.stage == "erase") CHECK(o.ran);
  }
  fs::remove_all(dir);
}

#ifdef ANTLAB_CLI
TEST_CASE("cli exit codes") {
  const auto dir = scratch("cli");
  auto run = [&](const std::string& args) {
    const std::string cmd = std::string(ANTLAB_CLI) + " " + args + " >" + (dir / "out.txt").string() + " 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
  };
  CHECK(run("--help") == 0);
  CHECK(run("") == 1);
  CHECK(run("eval --run-dir " + dir.string() + " --set nope=1") == 1);
  CHECK(run("eval --run-dir " + dir.string()) == 2);
  CHECK(slurp(dir / "out.txt").find("erased.ckpt") != std::string::npos);
  fs::remove_all(dir);
}
#endif
