#include "crayon/model/transformer.hpp"

#include "kernels.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace crayon::model {

using numerics::matmul_acc;
using numerics::matmul_nt_acc;
using numerics::matmul_tn_acc;
using namespace kernels;


void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw RangeError("empty token sequence");
  if (tokens.size() > config.max_seq) {
    throw RangeError("sequence length " + std::to_string(tokens.size()) + " exceeds max_seq " +
                     std::to_string(config.max_seq));
  }
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config.vocab_size) {
      throw RangeError("token id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
  }
}

template <typename T>
Matrix<T> forward(const TransformerWeights<T>& w, const DeltaSet<T>* delta,
                  std::span<const TokenId> tokens, ForwardTrace<T>* trace) {
  const ModelConfig& cfg = w.config;
  check_tokens(cfg, tokens);
  if (delta) check_delta(*delta, cfg);

  if (trace) {
    trace->tokens.assign(tokens.begin(), tokens.end());
    trace->layers.assign(cfg.n_layers, LayerTrace<T>{});
  }
  Matrix<T> x = embed(w, tokens);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights<T>& L = w.layers[l];
    LayerTrace<T>* lt = trace ? &trace->layers[l] : nullptr;
    const SiteDelta<T>* dq = delta ? delta->site(l, Projection::query) : nullptr;
    const SiteDelta<T>* dv = delta ? delta->site(l, Projection::value) : nullptr;

    Matrix<T> a;
    layer_norm(x, L.ln1_gain, L.ln1_bias, a, lt ? &lt->ln1_xhat : nullptr,
               lt ? &lt->ln1_rstd : nullptr);
    Matrix<T> q = project(a, L.wq, dq, lt ? &lt->q_low : nullptr);
    Matrix<T> k = numerics::matmul(a, L.wk);
    Matrix<T> v = project(a, L.wv, dv, lt ? &lt->v_low : nullptr);
    Matrix<T> att;
    attention(q, k, v, cfg.n_heads, att, lt ? &lt->probs : nullptr);

    Matrix<T> x1 = x;
    matmul_acc(att, L.wo, x1);

    Matrix<T> b;
    layer_norm(x1, L.ln2_gain, L.ln2_bias, b, lt ? &lt->ln2_xhat : nullptr,
               lt ? &lt->ln2_rstd : nullptr);
    Matrix<T> pre = numerics::matmul(b, L.w1);
    add_row_bias(pre, L.b1);
    Matrix<T> act(pre.rows(), pre.cols());
    for (std::size_t i = 0; i < pre.size(); ++i) act.data()[i] = gelu(pre.data()[i]);
    Matrix<T> x2 = x1;
    matmul_acc(act, L.w2, x2);
    add_row_bias(x2, L.b2);

    if (lt) {
      lt->input = std::move(x);
      lt->ln1_out = std::move(a);
      lt->q = std::move(q);
      lt->k = std::move(k);
      lt->v = std::move(v);
      lt->attn = std::move(att);
      lt->ln2_out = std::move(b);
      lt->ff_pre = std::move(pre);
      lt->ff_act = std::move(act);
    }
    x = std::move(x2);
  }
  Matrix<T> f;
  layer_norm(x, w.lnf_gain, w.lnf_bias, f, trace ? &trace->lnf_xhat : nullptr,
             trace ? &trace->lnf_rstd : nullptr);
  Matrix<T> logits = numerics::matmul_nt(f, w.token_embedding);
  if (trace) trace->final_norm = std::move(f);
  return logits;
}

template <typename T>
void backward(const TransformerWeights<T>& w, const DeltaSet<T>* delta,
              const ForwardTrace<T>& trace, const Matrix<T>& dlogits, DeltaSet<T>* delta_grads,
              TransformerWeights<T>* weight_grads) {
  const ModelConfig& cfg = w.config;
  const std::size_t n = trace.tokens.size(), d = cfg.d_model;
  if (trace.layers.size() != cfg.n_layers || trace.final_norm.rows() != n) {
    throw Error("backward: missing or incomplete forward trace");
  }
  if (dlogits.rows() != n || dlogits.cols() != cfg.vocab_size) {
    throw DimensionError("backward: dlogits is " + numerics::shape_string(dlogits));
  }
  TransformerWeights<T>* g = weight_grads;

  // Tied output projection.
  Matrix<T> df = numerics::matmul(dlogits, w.token_embedding);
  if (g) matmul_tn_acc(dlogits, trace.final_norm, g->token_embedding);

  Matrix<T> dx(n, d);
  layer_norm_backward(df, trace.lnf_xhat, trace.lnf_rstd, w.lnf_gain, dx,
                      g ? &g->lnf_gain : nullptr, g ? &g->lnf_bias : nullptr);

  for (std::size_t l = cfg.n_layers; l-- > 0;) {
    const LayerWeights<T>& L = w.layers[l];
    const LayerTrace<T>& lt = trace.layers[l];
    LayerWeights<T>* gl = g ? &g->layers[l] : nullptr;
    const SiteDelta<T>* sq = delta ? delta->site(l, Projection::query) : nullptr;
    const SiteDelta<T>* sv = delta ? delta->site(l, Projection::value) : nullptr;
    SiteDelta<T>* gq = delta_grads ? delta_grads->site(l, Projection::query) : nullptr;
    SiteDelta<T>* gv = delta_grads ? delta_grads->site(l, Projection::value) : nullptr;
    if (delta_grads && (!same_structure(sq, gq) || !same_structure(sv, gv))) {
      throw DimensionError("backward: gradient buffer does not match delta structure");
    }

    // Feed-forward block: x2 = x1 + gelu(ln2(x1) W1 + b1) W2 + b2.
    Matrix<T> dact(n, cfg.d_ff);
    matmul_nt_acc(dx, L.w2, dact);
    if (gl) {
      matmul_tn_acc(lt.ff_act, dx, gl->w2);
      sum_rows_into(dx, gl->b2);
    }
    Matrix<T> dpre(n, cfg.d_ff);
    for (std::size_t i = 0; i < dpre.size(); ++i) {
      dpre.data()[i] = dact.data()[i] * gelu_grad(lt.ff_pre.data()[i]);
    }
    if (gl) {
      matmul_tn_acc(lt.ln2_out, dpre, gl->w1);
      sum_rows_into(dpre, gl->b1);
    }
    Matrix<T> db(n, d);
    matmul_nt_acc(dpre, L.w1, db);
    Matrix<T> dx1 = dx;
    layer_norm_backward(db, lt.ln2_xhat, lt.ln2_rstd, L.ln2_gain, dx1,
                        gl ? &gl->ln2_gain : nullptr, gl ? &gl->ln2_bias : nullptr);

    // Attention block: x1 = x + attn(ln1(x)) Wo.
    Matrix<T> datt(n, d);
    matmul_nt_acc(dx1, L.wo, datt);
    if (gl) matmul_tn_acc(lt.attn, dx1, gl->wo);
    Matrix<T> dq(n, d), dk(n, d), dv(n, d);
    attention_backward(lt.q, lt.k, lt.v, lt.probs, datt, dq, dk, dv);

    Matrix<T> da(n, d);
    project_backward(lt.ln1_out, L.wq, sq, lt.q_low, dq, da, gl ? &gl->wq : nullptr, gq);
    project_backward<T>(lt.ln1_out, L.wk, nullptr, Matrix<T>{}, dk, da, gl ? &gl->wk : nullptr,
                        nullptr);
    project_backward(lt.ln1_out, L.wv, sv, lt.v_low, dv, da, gl ? &gl->wv : nullptr, gv);

    dx = std::move(dx1);
    layer_norm_backward(da, lt.ln1_xhat, lt.ln1_rstd, L.ln1_gain, dx,
                        gl ? &gl->ln1_gain : nullptr, gl ? &gl->ln1_bias : nullptr);
  }

  if (g) {
    for (std::size_t t = 0; t < n; ++t) {
      const T* dr = dx.data() + t * d;
      T* te = g->token_embedding.data() + static_cast<std::size_t>(trace.tokens[t]) * d;
      T* pe = g->position_embedding.data() + t * d;
      for (std::size_t c = 0; c < d; ++c) {
        te[c] += dr[c];
        pe[c] += dr[c];
      }
    }
  }
}

template <typename T>
std::vector<double> first_layer_queries(const TransformerWeights<T>& w,
                                        std::span<const TokenId> tokens) {
  check_tokens(w.config, tokens);
  const LayerWeights<T>& L = w.layers.at(0);
  Matrix<T> x = embed(w, tokens);
  Matrix<T> a;
  layer_norm<T>(x, L.ln1_gain, L.ln1_bias, a, nullptr, nullptr);
  const Matrix<T> q = numerics::matmul(a, L.wq);
  std::vector<double> pooled(q.cols(), 0.0);
  for (std::size_t r = 0; r < q.rows(); ++r) {
    for (std::size_t c = 0; c < q.cols(); ++c) pooled[c] += static_cast<double>(q(r, c));
  }
  for (double& v : pooled) v /= static_cast<double>(q.rows());
  return pooled;
}

#define CRAYON_INSTANTIATE(T)                                                                  \
  template Matrix<T> forward<T>(const TransformerWeights<T>&, const DeltaSet<T>*,              \
                                std::span<const TokenId>, ForwardTrace<T>*);                  \
  template void backward<T>(const TransformerWeights<T>&, const DeltaSet<T>*,                  \
                            const ForwardTrace<T>&, const Matrix<T>&, DeltaSet<T>*,            \
                            TransformerWeights<T>*);                                           \
  template std::vector<double> first_layer_queries<T>(const TransformerWeights<T>&,            \
                                                      std::span<const TokenId>);

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::model
