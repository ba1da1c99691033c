#include "crayon/model/weights.hpp"

#include <cmath>
#include <cstring>

#include "crayon/numerics/rng.hpp"

namespace crayon::model {

template <typename T>
TransformerWeights<T> zero_weights(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model, f = config.d_ff;
  TransformerWeights<T> w;
  w.config = config;
  w.config.precision = precision_of<T>();
  w.token_embedding = Matrix<T>(config.vocab_size, d);
  w.position_embedding = Matrix<T>(config.max_seq, d);
  w.layers.resize(config.n_layers);
  for (auto& L : w.layers) {
    L.ln1_gain = Matrix<T>(1, d);
    L.ln1_bias = Matrix<T>(1, d);
    L.wq = Matrix<T>(d, d);
    L.wk = Matrix<T>(d, d);
    L.wv = Matrix<T>(d, d);
    L.wo = Matrix<T>(d, d);
    L.ln2_gain = Matrix<T>(1, d);
    L.ln2_bias = Matrix<T>(1, d);
    L.w1 = Matrix<T>(d, f);
    L.b1 = Matrix<T>(1, f);
    L.w2 = Matrix<T>(f, d);
    L.b2 = Matrix<T>(1, d);
  }
  w.lnf_gain = Matrix<T>(1, d);
  w.lnf_bias = Matrix<T>(1, d);
  return w;
}

template <typename T>
TransformerWeights<T> init_weights(const ModelConfig& config, std::uint64_t seed) {
  TransformerWeights<T> w = zero_weights<T>(config);
  numerics::SplitMix64 rng(seed);
  const double base = 0.5 / std::sqrt(static_cast<double>(config.d_model));
  const double residual = base / std::sqrt(2.0 * static_cast<double>(config.n_layers));
  auto gaussian = [&](Matrix<T>& m, double stddev) {
    for (auto& v : m.values()) v = static_cast<T>(stddev * rng.normal());
  };
  gaussian(w.token_embedding, base);
  gaussian(w.position_embedding, base * 0.5);
  for (auto& L : w.layers) {
    L.ln1_gain.fill(T{1});
    L.ln2_gain.fill(T{1});
    gaussian(L.wq, base);
    gaussian(L.wk, base);
    gaussian(L.wv, base);
    gaussian(L.wo, residual);
    gaussian(L.w1, base);
    gaussian(L.w2, residual * std::sqrt(static_cast<double>(config.d_model) /
                                        static_cast<double>(config.d_ff)));
  }
  w.lnf_gain.fill(T{1});
  return w;
}

template <typename T>
void check_shapes(const TransformerWeights<T>& w) {
  const TransformerWeights<T> ref = zero_weights<T>(w.config);
  if (w.layers.size() != ref.layers.size()) {
    throw DimensionError("weights: layer count " + std::to_string(w.layers.size()) +
                         " != config n_layers " + std::to_string(ref.layers.size()));
  }
  std::vector<std::pair<std::string, const Matrix<T>*>> expect;
  ref.visit([&](const std::string& name, const Matrix<T>& m) { expect.emplace_back(name, &m); });
  std::size_t i = 0;
  w.visit([&](const std::string& name, const Matrix<T>& m) {
    if (!m.same_shape(*expect[i].second)) {
      throw DimensionError("weights: tensor '" + name + "' is " + numerics::shape_string(m) +
                           ", config expects " + numerics::shape_string(*expect[i].second));
    }
    ++i;
  });
}

template <typename T>
std::uint64_t checksum(const TransformerWeights<T>& w) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  w.visit([&](const std::string&, const Matrix<T>& m) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(m.data());
    for (std::size_t i = 0; i < m.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  });
  return h;
}

#define CRAYON_INSTANTIATE(T)                                                          \
  template TransformerWeights<T> zero_weights<T>(const ModelConfig&);                  \
  template TransformerWeights<T> init_weights<T>(const ModelConfig&, std::uint64_t);   \
  template void check_shapes<T>(const TransformerWeights<T>&);                         \
  template std::uint64_t checksum<T>(const TransformerWeights<T>&);

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::model
