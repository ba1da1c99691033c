#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "crayon/errors.hpp"
#include "crayon/hybrid/routing.hpp"
#include "crayon/model/sequence.hpp"
#include "support.hpp"

using namespace crayon;
using namespace crayon::hybrid;
using crayon::numerics::MatrixD;
using crayon::numerics::SplitMix64;
using model::TokenId;

namespace {

model::DecodeResult decode_of(std::initializer_list<std::vector<double>> rows) {
  model::DecodeResult d;
  const std::size_t cols = rows.begin()->size();
  d.distributions = MatrixD(rows.size(), cols);
  std::size_t i = 0;
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < cols; ++j) d.distributions(i, j) = r[j];
    d.tokens.push_back(static_cast<TokenId>(std::max_element(r.begin(), r.end()) - r.begin()));
    ++i;
  }
  return d;
}

std::vector<double> one_hot(std::size_t n, std::size_t k) {
  std::vector<double> v(n, 0.0);
  v[k] = 1.0;
  return v;
}

std::vector<double> random_simplex(SplitMix64& rng, std::size_t n) {
  std::vector<double> v(n);
  double s = 0;
  for (auto& x : v) s += (x = rng.uniform(0, 1));
  for (auto& x : v) x /= s;
  return v;
}

}  // namespace

TEST_CASE("signature is the mean of per-step distributions") {
  const auto d1 = decode_of({one_hot(4, 2)});
  CHECK(signature_of(d1, Source::device).vector == one_hot(4, 2));
  const auto d2 = decode_of({{0.5, 0.5, 0, 0}, {0, 0.5, 0.5, 0}});
  const auto s2 = signature_of(d2, Source::server);
  CHECK(s2.vector == std::vector<double>{0.25, 0.5, 0.25, 0});
  CHECK(s2.source == Source::server);

  SplitMix64 rng(1);
  const auto p = random_simplex(rng, 32), q = random_simplex(rng, 32);
  model::DecodeResult d;
  d.distributions = MatrixD(2, 32);
  for (std::size_t j = 0; j < 32; ++j) {
    d.distributions(0, j) = p[j];
    d.distributions(1, j) = q[j];
  }
  const auto s = signature_of(d, Source::device).vector;
  double total = 0;
  for (std::size_t j = 0; j < 32; ++j) {
    CHECK(std::abs(s[j] - (p[j] + q[j]) / 2) < 1e-15);
    total += s[j];
  }
  CHECK(std::abs(total - 1.0) < 1e-12);
  CHECK_THROWS_AS(signature_of(model::DecodeResult{}, Source::device), EmptyGenerationError);
}

TEST_CASE("routing score is the mean cosine over prototypes") {
  PrototypeSet s{{one_hot(3, 0), one_hot(3, 1)}};
  CHECK(routing_score(one_hot(3, 0), s) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(routing_score(one_hot(3, 2), s) == 0.0);
  const std::vector<double> both{1, 1, 0};
  CHECK(routing_score(both, s) == doctest::Approx(1 / std::sqrt(2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(routing_score(one_hot(4, 0), s), DimensionError);
  CHECK_THROWS_AS(routing_score(one_hot(3, 0), PrototypeSet{}), CountError);

  // Oracle: explicit dot products and norms.
  SplitMix64 rng(2);
  PrototypeSet five;
  for (int i = 0; i < 5; ++i) five.signatures.push_back(random_simplex(rng, 32));
  const auto o = random_simplex(rng, 32);
  double expected = 0;
  for (const auto& p : five.signatures) {
    double dot = 0, no = 0, np = 0;
    for (std::size_t j = 0; j < 32; ++j) {
      dot += o[j] * p[j];
      no += o[j] * o[j];
      np += p[j] * p[j];
    }
    expected += dot / std::sqrt(no * np) / 5;
  }
  CHECK(std::abs(routing_score(o, five) - expected) < 1e-12);
}

TEST_CASE("max-softmax score is the mean over steps of the top probability") {
  CHECK(max_softmax_of(decode_of({one_hot(32, 5)})) == 1.0);
  CHECK(max_softmax_of(decode_of({std::vector<double>(32, 1.0 / 32)})) ==
        doctest::Approx(1.0 / 32).epsilon(1e-15));
  CHECK(max_softmax_of(decode_of({{0.8, 0.2}, {0.4, 0.6}})) == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(score_decode(decode_of({{0.8, 0.2}, {0.4, 0.6}}), PrototypeSet{}, Scorer::max_softmax) ==
        doctest::Approx(0.7).epsilon(1e-15));
  CHECK(parse_scorer("max-softmax") == Scorer::max_softmax);
  CHECK(scorer_name(parse_scorer("prototype")) == "prototype");
  CHECK_THROWS_AS(parse_scorer("entropy"), RangeError);
}

TEST_CASE("calibration picks the (k+1)-th smallest score") {
  std::vector<double> s;
  for (int i = 10; i >= 1; --i) s.push_back(i / 10.0);
  const auto c = calibrate_threshold(s, 0.2);
  CHECK(c.threshold == 0.3);
  CHECK(c.k == 2);
  CHECK(c.routed == 2);
  CHECK(!c.ties);

  const std::vector<double> flat(10, 0.5);
  const auto f = calibrate_threshold(flat, 0.2);
  CHECK(f.threshold == 0.5);
  CHECK(f.routed == 0);
  CHECK(f.ties);

  const auto tiny = calibrate_threshold(s, 0.05);
  CHECK(tiny.k == 0);
  CHECK(tiny.routed == 0);
  CHECK(tiny.threshold == 0.1);

  CHECK_THROWS_AS(calibrate_threshold(std::vector<double>{}, 0.2), CountError);
  CHECK_THROWS_AS(calibrate_threshold(s, 0.0), RangeError);
  CHECK_THROWS_AS(calibrate_threshold(s, 1.0), RangeError);
  CHECK_THROWS_AS(calibrate_threshold(std::vector<double>{0.1, NAN}, 0.2), NonFiniteError);

  // Distinct random scores: exactly floor(ratio * M) below the threshold.
  SplitMix64 rng(3);
  std::vector<double> r(200);
  for (auto& x : r) x = rng.uniform(0, 1);
  for (double ratio : {0.1, 0.2, 0.3}) {
    const auto cr = calibrate_threshold(r, ratio);
    CHECK(cr.routed == static_cast<std::size_t>(std::floor(ratio * 200)));
    CHECK(static_cast<std::size_t>(std::count_if(r.begin(), r.end(), [&](double x) {
            return x < cr.threshold;
          })) == cr.routed);
  }
}

TEST_CASE("hybrid answers: extremes, degraded mode and nested routing") {
  const auto c = testing::tiny_config(8, 1, 2, model::kVocabSize, 20);
  const auto dw = testing::random_weights<double>(c, 4, 0.5);
  const auto sw = testing::random_weights<double>(c, 5, 0.5);
  const model::ModelView<double> device{&dw, nullptr}, server{&sw, nullptr};
  SplitMix64 rng(6);
  std::vector<std::vector<TokenId>> prompts;
  for (int i = 0; i < 30; ++i) {
    std::vector<TokenId> p(3 + rng.below(5));
    for (auto& t : p) t = static_cast<TokenId>(rng.below(model::kAlphabetSize));
    prompts.push_back(p);
  }
  const auto protos = build_prototypes(server, std::span<const std::vector<TokenId>>(prompts).first(5));
  CHECK(protos.size() == 5);
  CHECK(protos.dim() == model::kVocabSize);
  CHECK_THROWS_AS(build_prototypes(server, std::span<const std::vector<TokenId>>{}), CountError);

  for (Scorer scorer : {Scorer::prototype, Scorer::max_softmax}) {
    RoutingConfig low{-1.0, 0.2, scorer}, high{2.0, 0.2, scorer};
    std::vector<double> thresholds{-1.0, 0.2, 0.5, 0.8, 0.95, 2.0};
    for (const auto& p : prompts) {
      const auto dev = model::answer_query(device, p);
      const auto srv = model::answer_query(server, p);
      const auto held = hybrid_answer(device, &server, p, protos, low);
      CHECK(held.decision == Decision::held);
      CHECK(held.tokens == dev.tokens);
      CHECK(held.score == score_decode(dev, protos, scorer));
      const auto routed = hybrid_answer(device, &server, p, protos, high);
      CHECK(routed.decision == Decision::routed);
      CHECK(routed.tokens == srv.tokens);
      const auto degraded = hybrid_answer<double>(device, nullptr, p, protos, high);
      CHECK(degraded.decision == Decision::held);
      CHECK(degraded.degraded);
      CHECK(degraded.tokens == dev.tokens);

      bool was_routed = false;
      for (double t : thresholds) {
        const auto a = hybrid_answer(device, &server, p, protos, RoutingConfig{t, 0.2, scorer});
        const bool now = a.decision == Decision::routed;
        CHECK((!was_routed || now));
        was_routed = now;
      }
    }
  }
}
