#include "crayon/model/decode.hpp"

#include <cmath>
#include <string>

#include "crayon/model/transformer.hpp"
#include "kernels.hpp"

namespace crayon::model {

namespace {

using namespace kernels;

template <typename T>
class KvCache {
 public:
  explicit KvCache(const ModelConfig& cfg) {
    keys_.assign(cfg.n_layers, Matrix<T>(cfg.max_seq, cfg.d_model));
    values_.assign(cfg.n_layers, Matrix<T>(cfg.max_seq, cfg.d_model));
  }

  // Runs one token at position `pos` and returns its logits (1 x vocab).
  Matrix<T> step(const TransformerWeights<T>& w, const DeltaSet<T>* delta, TokenId token,
                 std::size_t pos) {
    const ModelConfig& cfg = w.config;
    const std::size_t d = cfg.d_model, hd = cfg.head_dim();
    const T scale = T{1} / std::sqrt(static_cast<T>(hd));

    Matrix<T> x(1, d);
    for (std::size_t c = 0; c < d; ++c) {
      x(0, c) = w.token_embedding(static_cast<std::size_t>(token), c) +
                w.position_embedding(pos, c);
    }
    std::vector<T> scores(pos + 1);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const LayerWeights<T>& L = w.layers[l];
      const SiteDelta<T>* dq = delta ? delta->site(l, Projection::query) : nullptr;
      const SiteDelta<T>* dv = delta ? delta->site(l, Projection::value) : nullptr;
      Matrix<T> a;
      layer_norm<T>(x, L.ln1_gain, L.ln1_bias, a, nullptr, nullptr);
      const Matrix<T> q = project<T>(a, L.wq, dq, nullptr);
      const Matrix<T> k = numerics::matmul(a, L.wk);
      const Matrix<T> v = project<T>(a, L.wv, dv, nullptr);
      std::copy(k.values().begin(), k.values().end(), keys_[l].row(pos).begin());
      std::copy(v.values().begin(), v.values().end(), values_[l].row(pos).begin());

      Matrix<T> att(1, d);
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        const std::size_t off = h * hd;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= pos; ++j) {
          const T* kj = keys_[l].data() + j * d + off;
          T s{0};
          for (std::size_t c = 0; c < hd; ++c) s += q.data()[off + c] * kj[c];
          scores[j] = s * scale;
          mx = std::max(mx, scores[j]);
        }
        T z{0};
        for (std::size_t j = 0; j <= pos; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        for (std::size_t j = 0; j <= pos; ++j) {
          const T p = scores[j] / z;
          const T* vj = values_[l].data() + j * d + off;
          for (std::size_t c = 0; c < hd; ++c) att.data()[off + c] += p * vj[c];
        }
      }
      Matrix<T> x1 = x;
      numerics::matmul_acc(att, L.wo, x1);
      Matrix<T> b;
      layer_norm<T>(x1, L.ln2_gain, L.ln2_bias, b, nullptr, nullptr);
      Matrix<T> pre = numerics::matmul(b, L.w1);
      add_row_bias(pre, L.b1);
      for (auto& u : pre.values()) u = gelu(u);
      numerics::matmul_acc(pre, L.w2, x1);
      add_row_bias(x1, L.b2);
      x = std::move(x1);
    }
    Matrix<T> f;
    layer_norm<T>(x, w.lnf_gain, w.lnf_bias, f, nullptr, nullptr);
    return numerics::matmul_nt(f, w.token_embedding);
  }

 private:
  std::vector<Matrix<T>> keys_;
  std::vector<Matrix<T>> values_;
};

}  // namespace

template <typename T>
DecodeResult greedy_decode(const TransformerWeights<T>& w, const DeltaSet<T>* delta,
                           std::span<const TokenId> prompt, std::size_t max_new,
                           std::optional<TokenId> stop_token) {
  const ModelConfig& cfg = w.config;
  check_tokens(cfg, prompt);
  if (max_new > 0 && prompt.size() + max_new - 1 > cfg.max_seq) {
    throw RangeError("prompt of " + std::to_string(prompt.size()) + " tokens plus " +
                     std::to_string(max_new) + " new tokens exceeds max_seq " +
                     std::to_string(cfg.max_seq));
  }
  if (delta) check_delta(*delta, cfg);

  DecodeResult result;
  result.distributions = numerics::MatrixD(0, cfg.vocab_size);
  if (max_new == 0) return result;

  std::vector<double> dist_rows;
  KvCache<T> cache(cfg);
  Matrix<T> logits;
  for (std::size_t p = 0; p < prompt.size(); ++p) logits = cache.step(w, delta, prompt[p], p);

  std::size_t pos = prompt.size();
  for (std::size_t i = 0; i < max_new; ++i) {
    auto row = logits.row(0);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    const double mx = static_cast<double>(row[best]);
    double z = 0.0;
    const std::size_t base = dist_rows.size();
    for (T v : row) {
      const double e = std::exp(static_cast<double>(v) - mx);
      dist_rows.push_back(e);
      z += e;
    }
    for (std::size_t c = 0; c < row.size(); ++c) dist_rows[base + c] /= z;

    const auto token = static_cast<TokenId>(best);
    result.tokens.push_back(token);
    if (stop_token && token == *stop_token) {
      result.stopped = true;
      break;
    }
    if (i + 1 < max_new) logits = cache.step(w, delta, token, pos++);
  }
  result.distributions =
      numerics::MatrixD(result.tokens.size(), cfg.vocab_size, std::move(dist_rows));
  return result;
}

template DecodeResult greedy_decode<float>(const TransformerWeights<float>&,
                                           const DeltaSet<float>*, std::span<const TokenId>,
                                           std::size_t, std::optional<TokenId>);
template DecodeResult greedy_decode<double>(const TransformerWeights<double>&,
                                            const DeltaSet<double>*, std::span<const TokenId>,
                                            std::size_t, std::optional<TokenId>);

}  // namespace crayon::model
