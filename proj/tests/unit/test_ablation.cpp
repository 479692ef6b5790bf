#include "circuit/ablation.hpp"
#include "circuit/error.hpp"
#include "circuit/forward.hpp"

#include <doctest.h>

#include <random>

#include "toy.hpp"

using namespace circuit;
using doctest::Contains;

namespace {

Matrix constant(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n;
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST_CASE("mean of one sample is its trace") {
  const auto m = toy::random_model(toy::config(), 4);
  const auto t = toy::random_tokens(m.config(), 1, 6, 2);
  const auto cache = compute_mean_cache(m, t);
  const auto [logits, trace] = forward_traced(m, t);
  CHECK(cache.means.size() == trace.contributions.size());
  for (const auto& [id, c] : trace.contributions) CHECK(toy::rel_error(cache.at(id), c) < 1e-6);
  CHECK(cache.template_length == 6);
  CHECK(cache.model_id == m.lineage());
  CHECK(cache.dataset_id.rfind("sha256:", 0) == 0);
}

TEST_CASE("contributions c and -c average to zero") {
  // One position, unbiased LN and value projection, and e_b = -e_a make the
  // head output odd in the embedding.
  const auto c = toy::config(1, 2, 4, 8, 2, 1);
  auto parts = toy::random_model(c, 9).parts();
  Matrix e = *parts.embedding;
  e.row(1) = -e.row(0);
  parts.embedding = std::make_shared<const Matrix>(e);
  parts.positional = std::make_shared<const Matrix>(Matrix::Zero(1, c.d_model));
  parts.layers[0].ln1.bias.setZero();
  for (auto& h : parts.layers[0].heads) {
    auto hw = std::make_shared<HeadWeights>(*h);
    hw->b_v.setZero();
    h = hw;
  }
  const Model m(parts);
  TokenMatrix t(2, 1);
  t << 0, 1;
  const auto cache = compute_mean_cache(m, t);
  const auto [logits, trace] = forward_traced(m, t);
  const Matrix& head = trace.contributions.at(ComponentId::attention_head(0, 1));
  CHECK(head.row(0).norm() > 0.1f);
  CHECK(cache.at(ComponentId::attention_head(0, 1)).norm() < 1e-6f);
}

TEST_CASE("matches an elementwise brute-force average over 8 samples") {
  const auto m = toy::random_model(toy::config(2, 4, 8, 32), 17);
  const auto t = toy::random_tokens(m.config(), 8, 7, 3);
  const auto cache = compute_mean_cache(m, t);
  for (const auto& [id, mean] : cache.means) {
    Matrix expected = Matrix::Zero(7, m.config().d_model);
    for (int b = 0; b < 8; ++b) {
      const auto [logits, trace] = forward_traced(m, TokenMatrix(t.row(b)));
      expected += trace.contributions.at(id) / 8.0f;
    }
    CHECK(toy::rel_error(mean, expected) < 1e-5);
  }
}

TEST_CASE("mean cache input errors") {
  const auto m = toy::random_model(toy::config(), 1);
  CHECK_THROWS_AS(compute_mean_cache(m, TokenMatrix(0, 4)), DatasetError);
  CHECK_THROWS_AS(compute_mean_cache(m, std::span<const PromptSample>{}), DatasetError);
  auto samples = toy::random_samples(m.config(), 3, 5, 1);
  samples[1].tokens.pop_back();
  CHECK_THROWS_AS(compute_mean_cache(m, samples), DatasetError);
}

TEST_CASE("mean cache archive round trip") {
  const auto m = toy::random_model(toy::config(), 2);
  const auto cache = compute_mean_cache(m, toy::random_tokens(m.config(), 5, 4, 1));
  const auto back = MeanCache::from_archive(TensorArchive::parse(cache.to_archive().serialize()));
  CHECK(back.template_length == 4);
  CHECK(back.dataset_id == cache.dataset_id);
  CHECK(back.model_id == cache.model_id);
  REQUIRE(back.means.size() == cache.means.size());
  for (const auto& [id, mean] : cache.means) CHECK(back.at(id) == mean);
  CHECK_THROWS_WITH_AS(cache.at(ComponentId::attention_head(5, 0)), Contains("L5H0"), AblationError);
  auto bad = cache.to_archive();
  bad.put("bogus", {{1}, {0}});
  CHECK_THROWS_AS(MeanCache::from_archive(bad), ArchiveError);
}

TEST_CASE("empty overrides equal forward exactly") {
  const auto m = toy::random_model(toy::config(), 5);
  const auto t = toy::random_tokens(m.config(), 3, 8, 5);
  CHECK(hooked_forward(m, {}, t).values == forward(m, t).values);
}

TEST_CASE("zeroing every component leaves embeddings plus output biases") {
  const auto m = toy::random_model(toy::config(), 6);
  const auto t = toy::random_tokens(m.config(), 2, 5, 1);
  std::vector<Patch> patches;
  for (const auto& id : m.retained_components()) patches.push_back({id, Override::zero()});
  Matrix stream = engine::embed(m, t);
  for (const auto& lw : m.layers()) stream.rowwise() += lw.b_o;
  const Matrix expected = engine::unembed(m, stream);
  CHECK(toy::rel_error(hooked_forward(m, patches, t).values, expected) < 1e-5);
}

TEST_CASE("override validation") {
  const auto m = toy::random_model(toy::config(), 1);
  const auto t = toy::random_tokens(m.config(), 1, 5, 1);
  const Patch unknown{ComponentId::attention_head(0, 9), Override::zero()};
  CHECK_THROWS_WITH_AS(hooked_forward(m, std::span(&unknown, 1), t), Contains("L0H9"), AblationError);
  const Patch wrong{ComponentId::mlp(1), Override::constant(Matrix::Zero(4, 32))};
  CHECK_THROWS_WITH_AS(hooked_forward(m, std::span(&wrong, 1), t), Contains("L1MLP"), ShapeError);
}

TEST_CASE("override idempotence and order independence") {
  const auto m = toy::random_model(toy::config(), 8);
  const auto t = toy::random_tokens(m.config(), 4, 6, 2);
  const Patch a{ComponentId::attention_head(0, 2), Override::constant(constant(6, 32, 1))};
  const Patch b{ComponentId::mlp(1), Override::zero()};
  const Patch c{ComponentId::attention_head(1, 0), Override::constant(constant(6, 32, 2))};
  const std::vector<Patch> once{a, b, c}, twice{a, a, b, c, c}, shuffled{c, a, b};
  const auto ref = hooked_forward(m, once, t).values;
  CHECK(hooked_forward(m, twice, t).values == ref);
  CHECK(hooked_forward(m, shuffled, t).values == ref);
  const std::vector<Patch> later_wins{{a.component, Override::zero()}, a};
  const std::vector<Patch> just_a{a};
  CHECK(hooked_forward(m, later_wins, t).values == hooked_forward(m, just_a, t).values);
}

TEST_CASE("a constant override is input-independent") {
  const auto m = toy::random_model(toy::config(), 3);
  const Matrix value = constant(5, 32, 4);
  const Patch p{ComponentId::attention_head(1, 1), Override::constant(value)};
  for (std::uint64_t seed : {1u, 2u}) {
    const auto t = toy::random_tokens(m.config(), 3, 5, seed);
    const auto map = engine::index_patches(m, std::span(&p, 1), 5);
    Matrix seen;
    const engine::Observer grab = [&](const ComponentId& id, const Matrix& c) {
      if (id == p.component) seen = c;
    };
    Matrix x = engine::embed(m, t);
    engine::run_layer(m, 0, x, 3, 5, &map, nullptr);
    engine::run_layer(m, 1, x, 3, 5, &map, &grab);
    REQUIRE(seen.rows() == 15);
    for (int b = 0; b < 3; ++b) CHECK(seen.middleRows(b * 5, 5) == value);
  }
}

TEST_CASE("hooked_forward_last returns final-position rows") {
  const auto m = toy::random_model(toy::config(), 2);
  const auto t = toy::random_tokens(m.config(), 3, 4, 7);
  const Patch p{ComponentId::attention_head(0, 1), Override::zero()};
  const auto full = hooked_forward(m, std::span(&p, 1), t);
  const auto last = hooked_forward_last(m, std::span(&p, 1), t);
  REQUIRE(last.rows() == 3);
  for (int b = 0; b < 3; ++b) {
    const auto row = full.row(b, 3);
    for (Eigen::Index v = 0; v < last.cols(); ++v) {
      CHECK(last(b, v) == doctest::Approx(row[static_cast<std::size_t>(v)]).epsilon(1e-5));
    }
  }
}
