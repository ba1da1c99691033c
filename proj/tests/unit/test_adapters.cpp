#include <doctest.h>

#include <cmath>
#include <numeric>
#include <string>

#include "crayon/adapters/lora_backward.hpp"
#include "crayon/adapters/pool.hpp"
#include "crayon/adapters/pool_io.hpp"
#include "crayon/errors.hpp"
#include "crayon/model/loss.hpp"
#include "crayon/model/transformer.hpp"
#include "support.hpp"

using namespace crayon;
using namespace crayon::adapters;
using crayon::numerics::Matrix;
using crayon::numerics::MatrixD;
using crayon::numerics::SplitMix64;

namespace {

// Largest |difference| between the materialized deltas of two delta sets.
template <typename T>
double delta_distance(const DeltaSet<T>& x, const DeltaSet<T>& y, const model::ModelConfig& c) {
  double worst = 0.0;
  for (const auto& s : model::adapted_sites(c.n_layers)) {
    const auto mx = model::materialize(*x.site(s.layer, s.projection));
    const auto my = model::materialize(*y.site(s.layer, s.projection));
    worst = std::max(worst, numerics::max_abs_diff(numerics::cast<double>(mx),
                                                   numerics::cast<double>(my)));
  }
  return worst;
}

BlendWeights random_weights(SplitMix64& rng, std::size_t n) {
  BlendWeights w;
  for (std::size_t i = 0; i < n; ++i) w.alphas.push_back(rng.uniform(0, 1));
  return w;
}

std::string replace_once(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

}  // namespace

TEST_CASE("init_pool: A bounded by 1/sqrt(d), B zero, every q/v site") {
  const auto c = testing::tiny_config(16, 3, 2);
  const auto pool = init_pool<double>(c, 4, 2, 4.0, 9);
  CHECK(pool.n_bases() == 4);
  CHECK(pool.sites.size() == 6);
  CHECK(pool.scale() == 2.0);
  for (const auto& adapter : pool.adapters) {
    for (const auto& p : adapter) {
      for (double v : p.a.values()) CHECK(std::abs(v) <= 0.25);
      for (double v : p.b.values()) CHECK(v == 0.0);
    }
  }
  CHECK_THROWS_AS(init_pool<double>(c, 0, 2, 4.0, 1), CountError);
  CHECK_THROWS_AS(init_pool<double>(c, 2, 0, 4.0, 1), CountError);
}

TEST_CASE("one-hot blend equals the chosen base adapter; zero blend is zero") {
  const auto c = testing::tiny_config(8, 2, 2);
  const auto pool = testing::random_pool<double>(c, 3, 2, 5);
  for (std::size_t k = 0; k < 3; ++k) {
    BlendWeights w{{0.0, 0.0, 0.0}, true};
    w.alphas[k] = 1.0;
    const auto d = combine_pool(pool, w);
    for (std::size_t s = 0; s < pool.sites.size(); ++s) {
      const auto& site = pool.sites[s];
      const MatrixD expect = numerics::matmul(pool.adapters[k][s].a, pool.adapters[k][s].b);
      const MatrixD got = model::materialize(*d.site(site.layer, site.projection));
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(std::abs(got.data()[i] - pool.scale() * expect.data()[i]) < 1e-14);
      }
    }
  }
  const auto zero = combine_pool(pool, BlendWeights{{0, 0, 0}, true});
  for (const auto& s : pool.sites) {
    const MatrixD m = model::materialize(*zero.site(s.layer, s.projection));
    for (double v : m.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("stacked blend matches the dense reference sum") {
  SplitMix64 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = testing::tiny_config(8 + 4 * (trial % 3), 2, 2);
    const std::size_t n = 1 + trial % 5, r = 1 + trial % 3;
    const auto pool = testing::random_pool<double>(c, n, r, 100 + trial);
    const auto w = random_weights(rng, n);
    CHECK(delta_distance(combine_pool(pool, w), dense_blend(pool, w), c) < 1e-12);
    const auto cust = blend_customized(pool, w, 77);
    CHECK(cust.effective_rank == n * r);
    CHECK(cust.pool_checksum == 77);
    CHECK(cust.weights.alphas == w.alphas);
  }
}

TEST_CASE("blend is linear in alpha and invariant under joint permutation") {
  SplitMix64 rng(41);
  const auto c = testing::tiny_config(8, 2, 2);
  const auto pool = testing::random_pool<double>(c, 4, 2, 8);
  for (int trial = 0; trial < 10; ++trial) {
    const auto a = random_weights(rng, 4), b = random_weights(rng, 4);
    const double k = rng.uniform(-2, 2);
    BlendWeights sum{{}, true}, scaled{{}, true};
    for (std::size_t i = 0; i < 4; ++i) {
      sum.alphas.push_back(a.alphas[i] + b.alphas[i]);
      scaled.alphas.push_back(k * a.alphas[i]);
    }
    for (const auto& s : pool.sites) {
      const MatrixD da = model::materialize(*combine_pool(pool, a).site(s.layer, s.projection));
      const MatrixD db = model::materialize(*combine_pool(pool, b).site(s.layer, s.projection));
      const MatrixD ds = model::materialize(*combine_pool(pool, sum).site(s.layer, s.projection));
      const MatrixD dk = model::materialize(*combine_pool(pool, scaled).site(s.layer, s.projection));
      for (std::size_t i = 0; i < ds.size(); ++i) {
        CHECK(std::abs(ds.data()[i] - da.data()[i] - db.data()[i]) < 1e-12);
        CHECK(std::abs(dk.data()[i] - k * da.data()[i]) < 1e-12);
      }
    }
    // Reverse the adapter order together with the alphas.
    auto perm = pool;
    std::reverse(perm.adapters.begin(), perm.adapters.end());
    BlendWeights rev = a;
    std::reverse(rev.alphas.begin(), rev.alphas.end());
    CHECK(delta_distance(combine_pool(pool, a), combine_pool(perm, rev), c) < 1e-12);
  }
}

TEST_CASE("blend errors") {
  const auto c = testing::tiny_config(8, 2, 2);
  const auto pool = testing::random_pool<double>(c, 3, 2, 5);
  CHECK_THROWS_AS(combine_pool(pool, BlendWeights{{1.0, 0.0}, true}), CountError);
  CHECK_THROWS_AS(combine_pool(pool, BlendWeights{{1.0, NAN, 0.0}, true}), NonFiniteError);
  CHECK_THROWS_AS(dense_blend(pool, BlendWeights{{1.0, INFINITY, 0.0}, true}), NonFiniteError);
  auto broken = pool;
  broken.adapters[1][0].b = Matrix<double>(3, 8);
  CHECK_THROWS_AS(check_pool(broken), DimensionError);
  const auto other = testing::tiny_config(16, 2, 2);
  CHECK_THROWS_AS(check_pool(pool, &other), DimensionError);
}

TEST_CASE("alpha from embedding") {
  auto ind = testing::random_indicators(3, 6, 2, 4);
  // Put the projection of q exactly on centroid 1.
  const std::vector<double> target = numerics::pca_reconstruct(ind.pca, ind.centroids.centroids.row(1));
  const auto w = alpha_from_embedding(ind, target, true);
  REQUIRE(w.alphas.size() == 3);
  CHECK(w.normalized);
  CHECK(std::abs(w.alphas[1] - 1.0) < 1e-12);
  for (double a : w.alphas) CHECK((a >= 0.0 && a <= 1.0));
  const auto raw = alpha_from_embedding(ind, target, false);
  CHECK(std::abs(raw.alphas[1] - 1.0) < 1e-12);
  for (std::size_t n = 0; n < 3; ++n) {
    CHECK(std::abs(w.alphas[n] - (raw.alphas[n] + 1.0) / 2.0) < 1e-15);
  }
  // Opposite direction: normalized alpha 0, raw -1.
  std::vector<double> z(ind.centroids.centroids.row(1).begin(), ind.centroids.centroids.row(1).end());
  for (double& v : z) v = -v;
  const auto opposite = alpha_from_embedding(ind, numerics::pca_reconstruct(ind.pca, z), true);
  CHECK(std::abs(opposite.alphas[1]) < 1e-12);
  // q at the PCA mean projects to zero.
  CHECK_THROWS_AS(alpha_from_embedding(ind, ind.pca.mean), ZeroVectorError);
  CHECK_THROWS_AS(alpha_from_embedding(ind, std::vector<double>(5, 1.0)), DimensionError);
  CHECK(constant_weights(3).alphas == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("pool file round trip is bit-exact and detects damage") {
  const auto c = testing::tiny_config(8, 2, 2);
  const auto pool = testing::random_pool<float>(c, 2, 3, 6);
  const auto ind = testing::random_indicators(2, 8, 4, 2);
  const std::string bytes = serialize_pool(pool, ind);
  const auto back = pool_from_file<float>(model::TensorFile::parse(bytes));
  CHECK(back.checksum == pool_checksum(pool, ind));
  CHECK(back.pool.rank == 3);
  CHECK(back.pool.scaling == pool.scaling);
  CHECK(back.pool.sites == pool.sites);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t s = 0; s < pool.sites.size(); ++s) {
      CHECK(back.pool.adapters[n][s].a == pool.adapters[n][s].a);
      CHECK(back.pool.adapters[n][s].b == pool.adapters[n][s].b);
    }
  }
  CHECK(back.indicators.centroids.centroids == ind.centroids.centroids);
  CHECK(back.indicators.pca.components == ind.pca.components);
  CHECK(back.indicators.pca.mean == ind.pca.mean);
  CHECK(serialize_pool(back.pool, back.indicators) == bytes);

  SUBCASE("truncation") {
    CHECK_THROWS_AS(model::TensorFile::parse(bytes.substr(0, bytes.size() - 5)), FormatError);
  }
  SUBCASE("declared n_bases differs from stored adapters") {
    const std::string bad = replace_once(bytes, "\"n_bases\":2", "\"n_bases\":3");
    try {
      pool_from_file<float>(model::TensorFile::parse(bad));
      FAIL("expected a mismatch error");
    } catch (const MismatchError& e) {
      CHECK(std::string(e.what()).find("n_bases") != std::string::npos);
    }
  }
  SUBCASE("recorded checksum differs from content") {
    const std::string hex = model::hex64(pool_checksum(pool, ind));
    std::string flipped = hex;
    flipped[0] = flipped[0] == '0' ? '1' : '0';
    const std::string bad = replace_once(bytes, hex, flipped);
    CHECK_THROWS_AS(pool_from_file<float>(model::TensorFile::parse(bad)), ChecksumMismatchError);
  }
  SUBCASE("checksum depends on indicators") {
    auto ind2 = ind;
    ind2.centroids.centroids(0, 0) += 1.0;
    CHECK(pool_checksum(pool, ind2) != pool_checksum(pool, ind));
  }
  SUBCASE("f32 pool read as f64 converts exactly") {
    const auto wide = pool_from_file<double>(model::TensorFile::parse(bytes));
    CHECK(wide.pool.adapters[1][2].a(3, 1) ==
          static_cast<double>(pool.adapters[1][2].a(3, 1)));
    CHECK(wide.checksum == back.checksum);
  }
}

TEST_CASE("lora backward matches finite differences of the blended loss") {
  const auto c = testing::tiny_config(8, 2, 2, 9, 8);
  const auto w = testing::random_weights<double>(c, 3);
  auto pool = testing::random_pool<double>(c, 3, 2, 4);
  SplitMix64 rng(5);
  std::vector<LoraExample> batch;
  for (int i = 0; i < 2; ++i) {
    LoraExample ex;
    ex.input = testing::random_tokens(rng, 6, c.vocab_size);
    ex.targets = testing::random_tokens(rng, 6, c.vocab_size);
    ex.mask = {0, 0, 1, 1, 1, 1};
    ex.weights = random_weights(rng, 3);
    batch.push_back(ex);
  }
  auto loss_at = [&]() {
    double total = 0.0;
    for (const auto& ex : batch) {
      const auto d = combine_pool(pool, ex.weights);
      total += model::nll_loss(model::forward(w, &d, std::span<const model::TokenId>(ex.input)),
                               std::span<const model::TokenId>(ex.targets),
                               std::span<const std::uint8_t>(ex.mask));
    }
    return total / static_cast<double>(batch.size());
  };
  auto grads = zeros_like(pool);
  const double loss = lora_backward(w, pool, std::span<const LoraExample>(batch), grads);
  CHECK(std::abs(loss - loss_at()) < 1e-12);
  testing::GradCheckStats stats;
  const double eps = 1e-5;
  for (std::size_t n = 0; n < pool.n_bases(); ++n) {
    for (std::size_t s = 0; s < pool.sites.size(); ++s) {
      for (auto* pair : {&pool.adapters[n][s].a, &pool.adapters[n][s].b}) {
        const auto& g = pair == &pool.adapters[n][s].a ? grads.adapters[n][s].a : grads.adapters[n][s].b;
        for (std::size_t i = 0; i < pair->size(); ++i) {
          const double keep = pair->data()[i];
          pair->data()[i] = keep + eps;
          const double up = loss_at();
          pair->data()[i] = keep - eps;
          const double down = loss_at();
          pair->data()[i] = keep;
          stats.add(g.data()[i], (up - down) / (2 * eps));
        }
      }
    }
  }
  INFO("max=" << stats.max() << " median=" << stats.median());
  CHECK(stats.max() < 1e-3);
  CHECK(stats.median() < 1e-5);
}
