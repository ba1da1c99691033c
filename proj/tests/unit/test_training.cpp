#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "crayon/adapters/lora_backward.hpp"
#include "crayon/errors.hpp"
#include "crayon/model/loss.hpp"
#include "crayon/model/sequence.hpp"
#include "crayon/model/transformer.hpp"
#include "crayon/training/optimizer.hpp"
#include "crayon/training/pool_training.hpp"
#include "crayon/training/pretrain.hpp"
#include "support.hpp"

using namespace crayon;
using namespace crayon::training;
using crayon::numerics::Matrix;
using crayon::numerics::MatrixD;
using crayon::numerics::SplitMix64;

namespace {

model::ModelConfig seq_config() { return testing::tiny_config(8, 2, 2, model::kVocabSize, 12); }

// Reverse-the-prompt examples over the first 6 letters, prompt length 3.
std::vector<Example> toy_corpus(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example e;
    for (int k = 0; k < 3; ++k) e.prompt.push_back(static_cast<model::TokenId>(rng.below(6)));
    e.answer.assign(e.prompt.rbegin(), e.prompt.rend());
    out.push_back(e);
  }
  return out;
}

TrainConfig small_train(std::size_t n_bases) {
  TrainConfig c;
  c.n_bases = n_bases;
  c.rank = 2;
  c.pca_dim = 3;
  c.batch_size = 4;
  c.max_iters = 6;
  c.seed = 5;
  return c;
}

bool pools_equal(const adapters::BaseAdapterPool<double>& a, const adapters::BaseAdapterPool<double>& b) {
  if (a.n_bases() != b.n_bases()) return false;
  for (std::size_t n = 0; n < a.n_bases(); ++n) {
    for (std::size_t s = 0; s < a.sites.size(); ++s) {
      if (!(a.adapters[n][s].a == b.adapters[n][s].a) || !(a.adapters[n][s].b == b.adapters[n][s].b)) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0.1, 0, 10) == 0.1);
  CHECK(std::abs(cosine_lr(0.1, 5, 10) - 0.05) < 1e-15);
  CHECK(std::abs(cosine_lr(0.1, 10, 10)) < 1e-15);
  for (std::size_t s = 1; s <= 10; ++s) CHECK(cosine_lr(0.1, s, 10) <= cosine_lr(0.1, s - 1, 10));
}

TEST_CASE("adamw first step and counter") {
  AdamWConfig cfg{0.1, 0.9, 0.999, 1e-8, 0.01};
  AdamW<double> opt(cfg);
  Matrix<double> p(1, 3), g(1, 3);
  p(0, 0) = 1.0, p(0, 1) = -2.0, p(0, 2) = 0.5;
  g(0, 0) = 0.3, g(0, 1) = -4.0, g(0, 2) = 0.0;
  const Matrix<double> before = p;
  const auto count = optimizer_steps();
  opt.step({&p}, {&g}, 0.1);
  CHECK(optimizer_steps() == count + 1);
  CHECK(opt.steps() == 1);
  for (std::size_t i = 0; i < 3; ++i) {
    // Bias-corrected first moments equal g and second moments g^2.
    const double gi = g.data()[i];
    const double expect = before.data()[i] - 0.1 * (gi / (std::abs(gi) + 1e-8) + 0.01 * before.data()[i]);
    CHECK(std::abs(p.data()[i] - expect) < 1e-15);
  }
  CHECK_THROWS_AS(opt.step({&p}, {}, 0.1), CountError);
}

TEST_CASE("batch sampler covers each epoch exactly once") {
  BatchSampler s(10, 3);
  std::multiset<std::size_t> seen;
  for (int i = 0; i < 5; ++i) {
    for (std::size_t v : s.next(4)) seen.insert(v);
  }
  // 20 draws = two full epochs.
  for (std::size_t v = 0; v < 10; ++v) CHECK(seen.count(v) == 2);
}

TEST_CASE("train config validation and json round trip") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  const TrainConfig back = train_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  TrainConfig bad = c;
  bad.n_bases = 0;
  CHECK_THROWS_AS(bad.validate(), CountError);
  bad = c;
  bad.optimizer.lr = -1.0;
  CHECK_THROWS_AS(bad.validate(), RangeError);
  const TrainConfig large = TrainConfig::large_scale();
  CHECK(large.n_bases == 32);
  CHECK(large.optimizer.lr == 1e-4);
  CHECK(large.batch_size == 128);
  CHECK(large.max_iters == 800);
}

TEST_CASE("zero learning rate leaves the pool at its initialisation") {
  const auto c = seq_config();
  const auto w = testing::random_weights<double>(c, 2, 0.5);
  const auto corpus = toy_corpus(24, 1);
  TrainConfig cfg = small_train(2);
  cfg.optimizer.lr = 0.0;
  const auto emb = extract_embeddings(w, std::span<const Example>(corpus), 100, 1);
  const auto ind = build_indicators(emb, cfg);
  const auto r = train_pool(w, std::span<const Example>(corpus), ind, cfg);
  const auto init = adapters::init_pool<double>(c, 2, 2, cfg.scaling, numerics::derive_seed(cfg.seed, 1));
  CHECK(pools_equal(r.pool, init));
  CHECK(r.log.loss.size() == cfg.max_iters);
}

TEST_CASE("iteration-0 loss equals the base model loss on the first batch") {
  const auto c = seq_config();
  const auto w = testing::random_weights<double>(c, 2, 0.5);
  const auto corpus = toy_corpus(24, 2);
  const TrainConfig cfg = small_train(3);
  const auto ind = build_indicators(extract_embeddings(w, std::span<const Example>(corpus), 100, 1), cfg);
  const auto r = train_pool(w, std::span<const Example>(corpus), ind, cfg);
  BatchSampler sampler(corpus.size(), numerics::derive_seed(cfg.seed, 2));
  double expect = 0.0;
  for (std::size_t idx : sampler.next(cfg.batch_size)) {
    const auto enc = model::encode_example(corpus[idx].prompt, corpus[idx].answer);
    expect += model::nll_loss(model::forward<double>(w, nullptr, std::span<const model::TokenId>(enc.input)),
                              std::span<const model::TokenId>(enc.targets),
                              std::span<const std::uint8_t>(enc.mask));
  }
  expect /= static_cast<double>(cfg.batch_size);
  // B = 0 at initialisation, so the blend contributes exactly nothing.
  CHECK(std::abs(r.log.loss[0] - expect) < 1e-12);
}

TEST_CASE("pool training is deterministic, trains, and never touches the base") {
  const auto c = seq_config();
  const auto w = testing::random_weights<double>(c, 2, 0.5);
  const auto before = model::checksum(w);
  const auto corpus = toy_corpus(40, 3);
  TrainConfig cfg = small_train(2);
  cfg.max_iters = 40;
  cfg.optimizer.lr = 2e-2;
  const auto ind = build_indicators(extract_embeddings(w, std::span<const Example>(corpus), 100, 1), cfg);
  const auto a = train_pool(w, std::span<const Example>(corpus), ind, cfg);
  const auto b = train_pool(w, std::span<const Example>(corpus), ind, cfg);
  CHECK(pools_equal(a.pool, b.pool));
  CHECK(a.log.loss == b.log.loss);
  CHECK(model::checksum(w) == before);
  const double first = std::accumulate(a.log.loss.begin(), a.log.loss.begin() + 5, 0.0);
  const double last = std::accumulate(a.log.loss.end() - 5, a.log.loss.end(), 0.0);
  CHECK(last < first);
  // One alpha record per example, in corpus order, untagged.
  REQUIRE(a.log.alphas.size() == corpus.size());
  CHECK(a.log.alphas[7].example == 7);
  CHECK(a.log.alphas[7].task.empty());
}

TEST_CASE("constant-alpha single adapter ignores the indicators") {
  const auto c = seq_config();
  const auto w = testing::random_weights<double>(c, 2, 0.5);
  const auto corpus = toy_corpus(16, 4);
  TrainConfig cfg = small_train(1);
  cfg.constant_alpha = true;
  const auto r = train_pool(w, std::span<const Example>(corpus), adapters::IndicatorSet{}, cfg);
  for (const auto& rec : r.log.alphas) CHECK(rec.alphas == std::vector<double>{1.0});
  TrainConfig mismatch = small_train(2);
  CHECK_THROWS_AS(train_pool(w, std::span<const Example>(corpus), adapters::IndicatorSet{}, mismatch),
                  CountError);
}

TEST_CASE("indicators separate two well-separated embedding clusters") {
  SplitMix64 rng(8);
  MatrixD emb(40, 5);
  for (std::size_t i = 0; i < 40; ++i) {
    const double centre = i < 20 ? 4.0 : -4.0;
    for (std::size_t j = 0; j < 5; ++j) emb(i, j) = (j == 0 ? centre : 0.0) + 0.1 * rng.uniform(-1, 1);
  }
  TrainConfig cfg = small_train(2);
  cfg.pca_dim = 2;
  const auto ind = build_indicators(emb, cfg);
  REQUIRE(ind.n_bases() == 2);
  const auto a = adapters::alpha_from_embedding(ind, emb.row(0));
  const auto b = adapters::alpha_from_embedding(ind, emb.row(39));
  const std::size_t ka = a.alphas[0] > a.alphas[1] ? 0 : 1;
  const std::size_t kb = b.alphas[0] > b.alphas[1] ? 0 : 1;
  CHECK(ka != kb);
  CHECK(a.alphas[ka] > 0.99);
  CHECK(a.alphas[kb] < 0.01);

  cfg.use_pca = false;
  const auto raw = build_indicators(emb, cfg);
  CHECK(raw.pca.components == numerics::identity<double>(5));
  CHECK(raw.pca.mean == std::vector<double>(5, 0.0));
}

TEST_CASE("alpha diversity report on a hand-made fixture") {
  std::vector<AlphaRecord> recs{
      {0, "x", {1.0, 0.0}}, {1, "x", {0.0, 0.0}}, {2, "y", {0.5, 0.2}}, {3, "y", {0.5, 0.2}}};
  const auto r = alpha_diversity_report(recs);
  CHECK(r.tasks.at("x").count == 2);
  CHECK(r.tasks.at("x").mean == std::vector<double>{0.5, 0.0});
  CHECK(r.tasks.at("x").std == std::vector<double>{0.5, 0.0});
  CHECK(r.tasks.at("y").mean == std::vector<double>{0.5, 0.2});
  CHECK(r.max_mean_gap[0] == 0.0);
  CHECK(std::abs(r.max_mean_gap[1] - 0.2) < 1e-15);
  // adapter 1 differs by 0.2 between x and y: two (task, adapter) pairs.
  CHECK(r.pairs_with_gap(0.05) == 2);
  CHECK(r.pairs_with_gap(0.3) == 0);
  // overall std of adapter 0 over {1, 0, .5, .5} is sqrt(0.125).
  CHECK(std::abs(r.overall_std[0] - std::sqrt(0.125)) < 1e-15);
  std::vector<AlphaRecord> untagged{{0, "", {1.0}}};
  CHECK_THROWS_AS(alpha_diversity_report(untagged), CountError);
  CHECK_THROWS_AS(alpha_diversity_report(std::vector<AlphaRecord>{}), CountError);
}

TEST_CASE("pretraining lowers the loss and is deterministic") {
  const auto c = seq_config();
  const auto corpus = toy_corpus(32, 6);
  PretrainConfig cfg;
  cfg.max_iters = 30;
  cfg.batch_size = 8;
  cfg.optimizer.lr = 1e-2;
  const auto a = pretrain<double>(c, std::span<const Example>(corpus), cfg);
  const auto b = pretrain<double>(c, std::span<const Example>(corpus), cfg);
  CHECK(model::checksum(a.weights) == model::checksum(b.weights));
  CHECK(a.loss.back() < a.loss.front());
}
