#pragma once

// Fixtures shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "crayon/adapters/pool.hpp"
#include "crayon/model/config.hpp"
#include "crayon/model/weights.hpp"
#include "crayon/numerics/rng.hpp"

namespace crayon::testing {

inline model::ModelConfig tiny_config(std::size_t d_model = 8, std::size_t n_layers = 2,
                                      std::size_t n_heads = 2, std::size_t vocab = 11,
                                      std::size_t max_seq = 12) {
  model::ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = d_model;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.d_ff = 2 * d_model;
  c.max_seq = max_seq;
  return c;
}

// Seeded init plus perturbed LayerNorm parameters and biases so every
// parameter has a non-trivial gradient.
template <typename T>
model::TransformerWeights<T> random_weights(const model::ModelConfig& c, std::uint64_t seed,
                                            double scale = 1.0) {
  auto w = model::init_weights<T>(c, seed);
  numerics::SplitMix64 rng(seed ^ 0xABCDEFULL);
  w.visit([&](const std::string& name, numerics::Matrix<T>& m) {
    const bool gain = name.find("gain") != std::string::npos;
    for (auto& v : m.values()) {
      if (gain) {
        v = static_cast<T>(1.0 + 0.3 * rng.uniform(-1, 1));
      } else if (name.find("bias") != std::string::npos || name.find(".b") != std::string::npos) {
        v = static_cast<T>(0.1 * rng.uniform(-1, 1));
      } else {
        v = static_cast<T>(static_cast<double>(v) * scale * 3.0);
      }
    }
  });
  return w;
}

inline std::vector<model::TokenId> random_tokens(numerics::SplitMix64& rng, std::size_t n,
                                                 std::size_t vocab) {
  std::vector<model::TokenId> t(n);
  for (auto& x : t) x = static_cast<model::TokenId>(rng.below(vocab));
  return t;
}

// Pool with both factors random (a trained pool has B != 0).
template <typename T>
adapters::BaseAdapterPool<T> random_pool(const model::ModelConfig& c, std::size_t n,
                                         std::size_t rank, std::uint64_t seed,
                                         double scale = 0.3, double scaling = 4.0) {
  auto pool = adapters::init_pool<T>(c, n, rank, scaling, seed);
  numerics::SplitMix64 rng(seed ^ 0x5151ULL);
  for (auto& adapter : pool.adapters) {
    for (auto& p : adapter) {
      for (auto& v : p.a.values()) v = static_cast<T>(scale * rng.uniform(-1, 1));
      for (auto& v : p.b.values()) v = static_cast<T>(scale * rng.uniform(-1, 1));
    }
  }
  return pool;
}

// PCA fitted to random samples, plus random centroids.
inline adapters::IndicatorSet random_indicators(std::size_t n, std::size_t in_dim,
                                                std::size_t out_dim, std::uint64_t seed) {
  numerics::SplitMix64 rng(seed);
  numerics::MatrixD samples(std::max<std::size_t>(n, out_dim + 1) + 8, in_dim);
  for (auto& v : samples.values()) v = rng.uniform(-1, 1);
  adapters::IndicatorSet ind;
  ind.pca = numerics::fit_pca(samples, out_dim);
  ind.centroids.centroids = numerics::MatrixD(n, out_dim);
  for (auto& v : ind.centroids.centroids.values()) v = rng.uniform(-1, 1);
  return ind;
}

struct GradCheckStats {
  std::vector<double> rel_errors;
  double max() const {
    return rel_errors.empty() ? 0.0 : *std::max_element(rel_errors.begin(), rel_errors.end());
  }
  double median() const {
    if (rel_errors.empty()) return 0.0;
    std::vector<double> s = rel_errors;
    std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(s.size() / 2), s.end());
    return s[s.size() / 2];
  }
  double fraction_below(double tol) const {
    if (rel_errors.empty()) return 1.0;
    return static_cast<double>(std::count_if(rel_errors.begin(), rel_errors.end(),
                                             [&](double e) { return e < tol; })) /
           static_cast<double>(rel_errors.size());
  }
  void add(double analytic, double numeric) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    rel_errors.push_back(scale < 1e-10 ? 0.0 : std::abs(analytic - numeric) / scale);
  }
};

}  // namespace crayon::testing
