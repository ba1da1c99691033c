#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crayon/model/config.hpp"
#include "crayon/numerics/matrix.hpp"

namespace crayon::model {

using numerics::Matrix;

template <typename T>
struct LayerWeights {
  Matrix<T> ln1_gain, ln1_bias;  // 1 x d
  Matrix<T> wq, wk, wv, wo;      // d x d, applied as x * W
  Matrix<T> ln2_gain, ln2_bias;  // 1 x d
  Matrix<T> w1, b1;              // d x f, 1 x f
  Matrix<T> w2, b2;              // f x d, 1 x d
};

// Pre-norm decoder-only transformer with learned absolute positions and an
// output projection tied to the token embedding.
template <typename T>
struct TransformerWeights {
  ModelConfig config;
  Matrix<T> token_embedding;     // vocab x d
  Matrix<T> position_embedding;  // max_seq x d
  std::vector<LayerWeights<T>> layers;
  Matrix<T> lnf_gain, lnf_bias;  // 1 x d

  // Calls f(name, tensor) for every parameter in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    f(std::string("tok_emb"), self.token_embedding);
    f(std::string("pos_emb"), self.position_embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(p + "ln1.gain", L.ln1_gain);
      f(p + "ln1.bias", L.ln1_bias);
      f(p + "wq", L.wq);
      f(p + "wk", L.wk);
      f(p + "wv", L.wv);
      f(p + "wo", L.wo);
      f(p + "ln2.gain", L.ln2_gain);
      f(p + "ln2.bias", L.ln2_bias);
      f(p + "ff.w1", L.w1);
      f(p + "ff.b1", L.b1);
      f(p + "ff.w2", L.w2);
      f(p + "ff.b2", L.b2);
    }
    f(std::string("lnf.gain"), self.lnf_gain);
    f(std::string("lnf.bias"), self.lnf_bias);
  }
};

// All-zero tensors of the config's shapes (also used as gradient buffers).
template <typename T>
TransformerWeights<T> zero_weights(const ModelConfig& config);

// Seeded random init: Gaussian matrices, unit LayerNorm gains, zero biases.
template <typename T>
TransformerWeights<T> init_weights(const ModelConfig& config, std::uint64_t seed);

template <typename T>
TransformerWeights<T> zeros_like(const TransformerWeights<T>& w) {
  return zero_weights<T>(w.config);
}

// Throws DimensionError if any tensor disagrees with the config.
template <typename T>
void check_shapes(const TransformerWeights<T>& w);

// FNV-1a over every tensor's bytes in visit order.
template <typename T>
std::uint64_t checksum(const TransformerWeights<T>& w);

template <typename U, typename T>
TransformerWeights<U> cast_weights(const TransformerWeights<T>& w) {
  TransformerWeights<U> out = zero_weights<U>(w.config);
  out.config.precision = precision_of<U>();
  std::vector<const Matrix<T>*> src;
  w.visit([&](const std::string&, const Matrix<T>& m) { src.push_back(&m); });
  std::size_t i = 0;
  out.visit([&](const std::string&, Matrix<U>& m) { m = numerics::cast<U>(*src[i++]); });
  return out;
}

}  // namespace crayon::model
