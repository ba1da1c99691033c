#include <doctest.h>

#include <atomic>
#include <cmath>
#include <thread>

#include "crayon/customization/endpoints.hpp"
#include "crayon/errors.hpp"
#include "crayon/model/sequence.hpp"
#include "crayon/model/tensor_file.hpp"
#include "crayon/model/transformer.hpp"
#include "crayon/training/optimizer.hpp"
#include "support.hpp"

using namespace crayon;
using namespace crayon::customization;
using crayon::numerics::MatrixD;
using crayon::numerics::SplitMix64;
using model::TokenId;

namespace {

model::ModelConfig seq_config() { return testing::tiny_config(8, 2, 2, model::kVocabSize, 20); }

std::vector<TokenId> random_prompt(SplitMix64& rng, std::size_t len) {
  std::vector<TokenId> p(len);
  for (auto& t : p) t = static_cast<TokenId>(rng.below(model::kAlphabetSize));
  return p;
}

CustomizationSet random_dc(SplitMix64& rng, std::size_t n) {
  CustomizationSet dc;
  for (std::size_t i = 0; i < n; ++i) {
    auto p = random_prompt(rng, 4 + rng.below(5));
    dc.examples.push_back({p, std::vector<TokenId>(p.rbegin(), p.rend())});
  }
  return dc;
}

adapters::PoolBundle<double> make_bundle(const model::ModelConfig& c, std::size_t n,
                                         std::uint64_t seed) {
  adapters::PoolBundle<double> b;
  b.pool = testing::random_pool<double>(c, n, 2, seed);
  b.indicators = testing::random_indicators(n, c.d_model, 3, seed + 1);
  b.checksum = adapters::pool_checksum(b.pool, b.indicators);
  return b;
}

PrototypeSource uniform_source(std::size_t count = 2) {
  PrototypeSource s;
  s.prototypes.signatures.assign(count, std::vector<double>(model::kVocabSize, 1.0 / model::kVocabSize));
  s.routing = hybrid::RoutingConfig{0.5, 0.2, hybrid::Scorer::prototype};
  return s;
}

}  // namespace

TEST_CASE("user embedding is the mean of per-example pooled queries over prompts") {
  const auto c = seq_config();
  const auto w = testing::random_weights<double>(c, 3, 0.5);
  SplitMix64 rng(1);
  const auto dc = random_dc(rng, 2);
  auto single = [&](const training::Example& e) {
    return model::first_layer_queries(w, model::answer_context(e.prompt));
  };
  const auto q0 = single(dc.examples[0]), q1 = single(dc.examples[1]);

  CustomizationSet one{{dc.examples[0]}};
  CHECK(user_embedding(w, one) == q0);
  CustomizationSet twice{{dc.examples[0], dc.examples[0]}};
  CHECK(user_embedding(w, twice) == q0);
  const auto q = user_embedding(w, dc);
  for (std::size_t j = 0; j < q.size(); ++j) CHECK(std::abs(q[j] - (q0[j] + q1[j]) / 2.0) < 1e-12);

  // Answers never enter.
  CustomizationSet other_answers = dc;
  for (auto& e : other_answers.examples) e.answer = {0};
  CHECK(user_embedding(w, other_answers) == q);
  CHECK_THROWS_AS(user_embedding(w, CustomizationSet{}), CountError);
}

TEST_CASE("request carries exactly five fields and round trips bit-exactly") {
  const auto c = seq_config();
  const auto b = make_bundle(c, 8, 4);
  SplitMix64 rng(2);
  std::vector<double> q(c.d_model);
  for (auto& v : q) v = rng.uniform(-1, 1);
  const auto req = make_request(b.indicators, q, 42);
  CHECK(req.n_bases == 8);
  CHECK(req.alphas == adapters::alpha_from_embedding(b.indicators, q).alphas);
  const std::string bytes = serialize_request(req);
  const auto j = nlohmann::json::parse(unframe(bytes));
  CHECK(j.size() == 5);
  for (const char* key : {"protocol_version", "client_id", "n_bases", "alphas", "normalized"}) {
    CHECK(j.contains(key));
  }
  CHECK(j.at("alphas").size() == 8);
  CHECK(parse_request(bytes) == req);

  CustomizationRequest raw = make_request(b.indicators, q, 42, false);
  raw.alphas[0] = -0.0;
  raw.alphas[1] = -1.0;
  CHECK(parse_request(serialize_request(raw)) == raw);
  CHECK(std::signbit(parse_request(serialize_request(raw)).alphas[0]));
}

TEST_CASE("request length depends only on the number of base adapters") {
  SplitMix64 rng(3);
  for (std::size_t n : {1u, 4u, 8u, 32u}) {
    std::size_t length = 0;
    for (int trial = 0; trial < 50; ++trial) {
      CustomizationRequest r;
      r.client_id = rng.below(10'000'000'000'000'000ULL);
      r.n_bases = n;
      for (std::size_t i = 0; i < n; ++i) r.alphas.push_back(rng.uniform(0, 1) * std::pow(10.0, rng.uniform(-300, 0)));
      const auto bytes = serialize_request(r);
      if (trial == 0) length = bytes.size();
      CHECK(bytes.size() == length);
    }
    // 4-byte prefix, 20 digits + 2 quotes + comma per alpha beyond the first.
    CustomizationRequest r{kProtocolVersion, 0, n, std::vector<double>(n, 0.5), true};
    CustomizationRequest r2 = r;
    r2.n_bases = n + 1;
    r2.alphas.push_back(0.5);
    if (n != 8) CHECK(serialize_request(r2).size() == serialize_request(r).size() + 23);
  }
}

TEST_CASE("request parsing rejects malformed messages") {
  CustomizationRequest r{kProtocolVersion, 7, 2, {0.25, 0.75}, true};
  const std::string good = unframe(serialize_request(r));
  auto with = [&](const std::string& from, const std::string& to) {
    std::string s = good;
    const auto pos = s.find(from);
    REQUIRE(pos != std::string::npos);
    return frame(s.replace(pos, from.size(), to));
  };
  CHECK_THROWS_AS(parse_request(with("\"protocol_version\":1", "\"protocol_version\":2")), VersionError);
  CHECK_THROWS_AS(parse_request(with("\"n_bases\":2", "\"n_bases\":3")), FormatError);
  CHECK_THROWS_AS(parse_request(with("{", "{\"prompt\":[1,2,3],")), FormatError);
  CHECK_THROWS_AS(parse_request(with("\"client_id\":\"0000000000000007\"", "\"client_id\":\"7\"")),
                  FormatError);
  const std::string framed = serialize_request(r);
  CHECK_THROWS_AS(parse_request(framed.substr(0, framed.size() - 1)), FormatError);
  CHECK_THROWS_AS(parse_request(framed + "x"), FormatError);
  CHECK_THROWS_AS(parse_request("ab"), FormatError);
  CustomizationRequest too_big = r;
  too_big.client_id = 10'000'000'000'000'000ULL;
  CHECK_THROWS_AS(serialize_request(too_big), RangeError);
}

TEST_CASE("serve_blend: one-hot selects the base adapter, deterministic, no training") {
  const auto c = seq_config();
  const auto b = make_bundle(c, 3, 5);
  const auto steps = training::optimizer_steps();
  CustomizationRequest req{kProtocolVersion, 1, 3, {0.0, 1.0, 0.0}, true};
  const auto pkg = serve_blend(b, req, b.checksum, uniform_source());
  CHECK(training::optimizer_steps() == steps);
  for (std::size_t s = 0; s < b.pool.sites.size(); ++s) {
    const auto& site = b.pool.sites[s];
    const MatrixD got = model::materialize(*pkg.adapter.delta.site(site.layer, site.projection));
    const MatrixD ab = numerics::matmul(b.pool.adapters[1][s].a, b.pool.adapters[1][s].b);
    for (std::size_t i = 0; i < got.size(); ++i) {
      CHECK(std::abs(got.data()[i] - b.pool.scale() * ab.data()[i]) < 1e-14);
    }
  }
  CHECK(serialize_package(pkg) == serialize_package(serve_blend(b, req, b.checksum, uniform_source())));
  CHECK(pkg.adapter.pool_checksum == b.checksum);

  CustomizationRequest wrong_n{kProtocolVersion, 1, 2, {0.5, 0.5}, true};
  CHECK_THROWS_AS(serve_blend(b, wrong_n, b.checksum, uniform_source()), CountError);
  CHECK_THROWS_AS(serve_blend(b, req, b.checksum ^ 1, uniform_source()), ChecksumMismatchError);
  CHECK_THROWS_AS(serve_blend(b, req, b.checksum, PrototypeSource{}), CountError);
}

TEST_CASE("request, serve and apply reproduce the local blend") {
  const auto c = seq_config();
  const auto bundle = make_bundle(c, 4, 6);
  auto base = std::make_shared<const model::TransformerWeights<double>>(testing::random_weights<double>(c, 7, 0.5));
  BlendServer<double> server(bundle);
  DeviceRuntime<double> device(base, server.provision(11), 11);
  SplitMix64 rng(8);
  const auto dc = random_dc(rng, 5);
  server.set_prototypes(11, uniform_source(dc.size()));

  const auto steps = training::optimizer_steps();
  const std::string request = device.customization_request(dc);
  device.apply_package_bytes(server.handle(request));
  CHECK(training::optimizer_steps() == steps);

  const auto local_w = adapters::alpha_from_embedding(bundle.indicators, user_embedding(*base, dc));
  const auto local = adapters::dense_blend(bundle.pool, local_w);
  const auto state = device.snapshot();
  REQUIRE(state);
  CHECK(state->alphas == local_w.alphas);
  for (const auto& s : bundle.pool.sites) {
    const MatrixD a = model::materialize(*state->delta.site(s.layer, s.projection));
    const MatrixD b = model::materialize(*local.site(s.layer, s.projection));
    CHECK(numerics::max_abs_diff(a, b) < 1e-10);
  }
  const auto prompt = random_prompt(rng, 6);
  const auto ctx = model::answer_context(prompt);
  const MatrixD deployed = model::forward(*base, &state->delta, std::span<const TokenId>(ctx));
  const MatrixD reference = model::forward(*base, &local, std::span<const TokenId>(ctx));
  CHECK(numerics::max_abs_diff(deployed, reference) < 1e-10);
}

TEST_CASE("blend server registry") {
  const auto c = seq_config();
  const auto bundle = make_bundle(c, 2, 9);
  BlendServer<double> server(bundle);
  CustomizationRequest req{kProtocolVersion, 5, 2, {0.5, 0.5}, true};
  CHECK_THROWS_AS(server.serve(req), MismatchError);
  server.provision(5);
  CHECK_THROWS_AS(server.serve(req), MismatchError);  // no prototypes yet
  CHECK_THROWS_AS(server.set_prototypes(6, uniform_source()), MismatchError);
  server.set_prototypes(5, uniform_source());
  CHECK_NOTHROW(server.serve(req));
  // A client that holds indicators of another pool is rejected.
  server.register_client(5, bundle.checksum + 1);
  CHECK_THROWS_AS(server.serve(req), ChecksumMismatchError);
}

TEST_CASE("deployment package round trip and damage") {
  const auto c = seq_config();
  const auto bundle = make_bundle(c, 3, 10);
  CustomizationRequest req{kProtocolVersion, 1, 3, {0.2, 0.3, 0.9}, true};
  const auto pkg = serve_blend(bundle, req, bundle.checksum, uniform_source(4));
  const std::string bytes = serialize_package(pkg);
  const auto back = parse_package<double>(bytes);
  CHECK(serialize_package(back) == bytes);
  CHECK(back.prototypes.size() == 4);
  CHECK(back.routing.threshold == 0.5);
  CHECK(back.adapter.weights.alphas == req.alphas);
  CHECK(back.adapter.effective_rank == 6);
  CHECK_NOTHROW(check_package(back, c));

  CHECK_THROWS_AS(parse_package<double>(bytes.substr(0, bytes.size() - 3)), FormatError);
  std::string versioned = unframe(bytes);
  const auto pos = versioned.find("\"version\":1");
  REQUIRE(pos != std::string::npos);
  versioned.replace(pos, 11, "\"version\":9");
  CHECK_THROWS_AS(parse_package<double>(frame(versioned)), VersionError);
  CHECK_THROWS_AS(check_package(back, testing::tiny_config(16, 2, 2, model::kVocabSize, 20)),
                  DimensionError);
  CHECK_THROWS_AS(check_package(back, testing::tiny_config(8, 2, 2, 30, 20)), DimensionError);
}

TEST_CASE("device runtime: zero package, idempotence, and rejected packages") {
  const auto c = seq_config();
  const auto bundle = make_bundle(c, 3, 12);
  auto base = std::make_shared<const model::TransformerWeights<double>>(testing::random_weights<double>(c, 13, 0.5));
  BlendServer<double> server(bundle);
  DeviceRuntime<double> device(base, server.provision(3), 3);
  SplitMix64 rng(14);
  const auto prompt = random_prompt(rng, 5);
  const model::ModelView<double> plain{base.get(), nullptr};
  CHECK(device.answer(prompt).tokens == model::answer_query(plain, prompt).tokens);
  CHECK_THROWS_AS(device.hybrid(prompt, nullptr), MismatchError);

  CustomizationRequest zero{kProtocolVersion, 3, 3, {0.0, 0.0, 0.0}, true};
  device.apply_package(serve_blend(bundle, zero, bundle.checksum, uniform_source()));
  const auto ctx = model::answer_context(prompt);
  CHECK(model::forward(*base, &device.snapshot()->delta, std::span<const TokenId>(ctx)) ==
        model::forward<double>(*base, nullptr, std::span<const TokenId>(ctx)));

  CustomizationRequest strong{kProtocolVersion, 3, 3, {1.0, 0.0, 1.0}, true};
  const std::string good = serialize_package(serve_blend(bundle, strong, bundle.checksum, uniform_source()));
  device.apply_package_bytes(good);
  const auto first = device.answer(prompt);
  device.apply_package_bytes(good);
  CHECK(device.answer(prompt).tokens == first.tokens);
  CHECK(device.answer(prompt).distributions == first.distributions);
  const auto kept = device.snapshot();

  // Truncated bytes, foreign pool, wrong width: all rejected, state kept.
  CHECK_THROWS_AS(device.apply_package_bytes(good.substr(0, good.size() - 10)), FormatError);
  auto foreign = serve_blend(bundle, strong, bundle.checksum, uniform_source());
  foreign.adapter.pool_checksum ^= 1;
  CHECK_THROWS_AS(device.apply_package(foreign), ChecksumMismatchError);
  const auto wide_c = testing::tiny_config(16, 2, 2, model::kVocabSize, 20);
  const auto wide = make_bundle(wide_c, 3, 12);
  CHECK_THROWS_AS(device.apply_package(serve_blend(wide, strong, wide.checksum, uniform_source())),
                  DimensionError);
  CHECK(device.snapshot() == kept);
  CHECK(device.answer(prompt).distributions == first.distributions);
}

TEST_CASE("readers see whole packages while another thread swaps them") {
  const auto c = seq_config();
  const auto bundle = make_bundle(c, 2, 15);
  auto base = std::make_shared<const model::TransformerWeights<double>>(testing::random_weights<double>(c, 16, 0.5));
  DeviceRuntime<double> device(base, Provisioning{bundle.indicators, bundle.checksum}, 1);
  const auto pa = serve_blend(bundle, CustomizationRequest{1, 1, 2, {1.0, 0.0}, true}, bundle.checksum, uniform_source());
  const auto pb = serve_blend(bundle, CustomizationRequest{1, 1, 2, {0.0, 1.0}, true}, bundle.checksum, uniform_source());
  SplitMix64 rng(17);
  const auto prompt = random_prompt(rng, 6);
  device.apply_package(pa);
  const auto da = device.answer(prompt).distributions;
  device.apply_package(pb);
  const auto db = device.answer(prompt).distributions;
  REQUIRE(!(da == db));

  std::atomic<bool> stop{false};
  std::atomic<int> bad{0}, reads{0};
  std::vector<std::thread> readers;
  for (int t = 0; t < 3; ++t) {
    readers.emplace_back([&] {
      while (!stop.load()) {
        const auto d = device.answer(prompt).distributions;
        if (!(d == da) && !(d == db)) ++bad;
        ++reads;
      }
    });
  }
  for (int i = 0; i < 200; ++i) device.apply_package(i % 2 ? pa : pb);
  while (reads.load() < 50) std::this_thread::yield();
  stop = true;
  for (auto& r : readers) r.join();
  CHECK(bad.load() == 0);
}
