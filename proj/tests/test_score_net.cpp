#include <doctest.h>

#include <filesystem>

#include "antlab/pretrainer.hpp"
#include "helpers.hpp"

using namespace antlab;

namespace {
std::vector<TrainSample> random_batch(const NetConfig& net, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainSample> b(n);
  for (auto& s : b) {
    s.z = 2.0 * rng.normal2();
    s.t_norm = rng.uniform();
    const int kind = rng.uniform_int(0, 2);
    if (kind == 0) s.cond = Cond::null();
    if (kind == 1) s.cond = Cond::of(rng.uniform_int(0, net.n_concepts - 1), rng.uniform_int(0, net.n_contexts - 1));
    if (kind == 2) s.cond = Cond::of_concept(rng.uniform_int(0, net.n_concepts - 1));
    s.target = rng.normal2();
  }
  return b;
}
}  // namespace

TEST_CASE("default network has the expected parameter count") {
  CHECK(ModelParams(NetConfig{}).size() == 20466);
}

TEST_CASE("forward is deterministic and unaffected by a zero-up adapter") {
  const auto net = testing::small_net();
  const auto p = testing::jiggled(net, 1);
  const Cond c = Cond::of(1, 2);
  const Vec2 z(0.3, -0.7);
  CHECK(forward(p, z, 0.4, c) == forward(p, z, 0.4, c));
  const auto a = LoraAdapter::create(net, 3, 9);
  CHECK(a.delta().isZero(0.0));
  CHECK(forward(p, z, 0.4, c, &a) == forward(p, z, 0.4, c));
}

TEST_CASE("embedding rows only reach their own conditions") {
  const auto net = testing::small_net();
  auto p = testing::jiggled(net, 2);
  const Vec2 z(0.1, 0.2);
  const Vec2 other = forward(p, z, 0.5, Cond::of(0, 1));
  const Vec2 uncond = forward(p, z, 0.5, Cond::null());
  const auto& blk = p.block("emb_concept");
  for (int j = 0; j < blk.cols; ++j) p.mutable_flat()[blk.offset + 3 * blk.cols + j] += 1.0;  // concept 3's row
  CHECK(forward(p, z, 0.5, Cond::of(0, 1)) == other);
  CHECK(forward(p, z, 0.5, Cond::null()) == uncond);
  CHECK(forward(p, z, 0.5, Cond::of(3, 1)) != forward(testing::jiggled(net, 2), z, 0.5, Cond::of(3, 1)));

  SUBCASE("unconditional output reads only the null rows") {
    auto q = testing::jiggled(net, 2);
    for (const char* name : {"emb_concept", "emb_context"}) {
      const auto& b = q.block(name);
      for (int r = 0; r + 1 < b.rows; ++r) {
        for (int j = 0; j < b.cols; ++j) q.mutable_flat()[b.offset + r * b.cols + j] += 0.5;
      }
    }
    CHECK(forward(q, z, 0.5, Cond::null()) == uncond);
  }
}

TEST_CASE("dsm gradient matches central differences") {
  for (Activation act : {Activation::silu, Activation::tanh}) {
    auto net = testing::small_net();
    net.activation = act;
    auto p = testing::jiggled(net, 3);
    const auto batch = random_batch(net, 12, 4);
    const auto lg = backward(p, batch);
    auto& x = p.mutable_flat();
    const auto rep = testing::fd_check(x, lg.grad, [&] { return backward(p, batch).loss; }, 40, 5);
    CHECK(rep.checked == 40);
    CHECK(rep.max_rel < 1e-4);
  }
}

TEST_CASE("adapter gradient matches central differences") {
  const auto net = testing::small_net();
  const auto p = testing::jiggled(net, 6);
  auto a = LoraAdapter::create(net, 2, 7);
  Rng rng(8);
  for (auto& v : a.values) v += 0.2 * rng.normal();
  const auto batch = random_batch(net, 10, 9);
  const auto lg = backward(p, batch, &a);
  REQUIRE(lg.grad.size() == a.values.size());
  const auto rep = testing::fd_check(a.values, lg.grad, [&] { return backward(p, batch, &a).loss; }, 20, 10);
  CHECK(rep.max_rel < 1e-4);
}

TEST_CASE("mse minimum and mean reduction") {
  const auto net = testing::small_net();
  const auto p = testing::jiggled(net, 11);
  auto batch = random_batch(net, 6, 12);
  for (auto& s : batch) s.target = forward(p, s.z, s.t_norm, s.cond);
  const auto zero = backward(p, batch);
  // forward and the batched pass round differently, so "zero" is ~1e-32
  CHECK(zero.loss < 1e-28);
  CHECK(std::all_of(zero.grad.begin(), zero.grad.end(), [](double g) { return std::abs(g) < 1e-13; }));

  auto b2 = random_batch(net, 6, 13);
  auto doubled = b2;
  doubled.insert(doubled.end(), b2.begin(), b2.end());
  const auto a = backward(p, b2), d = backward(p, doubled);
  CHECK(a.loss == doctest::Approx(d.loss).epsilon(1e-14));
  for (std::size_t i = 0; i < a.grad.size(); ++i) CHECK(a.grad[i] == doctest::Approx(d.grad[i]).epsilon(1e-12));
}

TEST_CASE("frozen clone") {
  const auto net = testing::small_net();
  const auto p = testing::jiggled(net, 14);
  const auto frozen = clone_frozen(p);
  CHECK(frozen.read_only());
  CHECK(forward(frozen, Vec2(1, 1), 0.3, Cond::of(1, 1)) == forward(p, Vec2(1, 1), 0.3, Cond::of(1, 1)));
  auto copy = frozen;
  CHECK_THROWS_AS(copy.mutable_flat(), RuntimeFailure);
  auto w = writable_copy(frozen);
  CHECK_NOTHROW(w.mutable_flat()[0] += 1.0);

  SUBCASE("training the original leaves the clone bitwise unchanged") {
    const auto sum = frozen.checksum();
    const auto spec = make_mixture(4, 3, 2.0, 0.1);
    const auto data = sample_dataset(spec, 200, 1);
    PretrainConfig cfg;
    cfg.steps = 100;
    cfg.batch = 16;
    pretrain(net, testing::default_schedule(), data, cfg);
    CHECK(frozen.checksum() == sum);
  }
}

TEST_CASE("layout round trip") {
  const auto p = testing::jiggled(NetConfig{}, 15);
  CHECK(flatten(p.config(), unflatten(p)) == p.flat());
}

TEST_CASE("checkpoint and adapter files round trip bit-exactly") {
  const auto dir = std::filesystem::temp_directory_path() / "antlab_ckpt_test";
  std::filesystem::create_directories(dir);
  const auto p = testing::jiggled(testing::small_net(), 16);
  save_checkpoint(p, dir / "p.ckpt");
  const auto q = load_checkpoint(dir / "p.ckpt");
  CHECK(q.flat() == p.flat());
  CHECK(q.config() == p.config());

  auto a = LoraAdapter::create(p.config(), 3, 17);
  a.concept_id = 2;
  Rng rng(18);
  for (auto& v : a.values) v = rng.normal();
  save_adapter(a, dir / "a.txt");
  const auto b = load_adapter(dir / "a.txt");
  CHECK(b.values == a.values);
  CHECK(b.concept_id == 2);
  CHECK(b.rank == 3);
  std::filesystem::remove_all(dir);
}
