#include <doctest.h>

#include "antlab/pretrainer.hpp"
#include "helpers.hpp"

using namespace antlab;

TEST_CASE("overfits a single repeated point") {
  const auto spec = make_mixture(8, 20, 2.0, 0.1);
  Dataset d;
  d.spec = spec;
  d.points.assign(64, LabeledPoint{Vec2(1.0, -0.5), 3, 4});
  PretrainConfig cfg;
  cfg.steps = 2000;
  cfg.batch = 64;
  cfg.seed = 1;
  const auto r = pretrain(NetConfig{}, testing::default_schedule(), d, cfg);
  REQUIRE(!r.loss_curve.empty());
  CHECK(r.loss_curve.back().loss < 0.05);
  CHECK(r.loss_curve.back().loss < r.loss_curve.front().loss);
}

TEST_CASE("zero steps return the initialization; seeds reproduce") {
  const auto net = testing::small_net();
  const auto data = sample_dataset(make_mixture(4, 3, 2.0, 0.1), 500, 2);
  PretrainConfig cfg;
  cfg.steps = 0;
  cfg.seed = 9;
  const auto s = testing::default_schedule();
  CHECK(pretrain(net, s, data, cfg).params.flat() == ModelParams::initialize(net, derive_seed(9, "init")).flat());
  cfg.steps = 150;
  cfg.batch = 32;
  const auto a = pretrain(net, s, data, cfg), b = pretrain(net, s, data, cfg);
  CHECK(a.params.flat() == b.params.flat());
  for (const auto& lp : a.loss_curve) CHECK(std::isfinite(lp.loss));
}

TEST_CASE("config validation") {
  PretrainConfig cfg;
  cfg.cond_dropout = 1.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  cfg = {};
  cfg.lr = 0.0;
  CHECK_THROWS_AS(cfg.validate(), InvalidInput);
}

TEST_CASE("dsm batches drop the condition at the configured rate") {
  const auto data = sample_dataset(make_mixture(4, 3, 2.0, 0.1), 500, 3);
  Rng rng(4);
  const auto b = make_dsm_batch(testing::default_schedule(), data, 20000, 0.1, rng);
  int dropped = 0;
  for (const auto& s : b) dropped += s.cond.is_null();
  CHECK(std::abs(dropped / 20000.0 - 0.1) < 0.01);
}
