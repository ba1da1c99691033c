#pragma once

// Building blocks shared by the traced forward/backward pass and the
// incremental decoder. Private to the model sources.

#include <cmath>
#include <limits>
#include <span>
#include <variant>
#include <vector>

#include "crayon/model/delta.hpp"
#include "crayon/model/weights.hpp"

namespace crayon::model::kernels {

using numerics::matmul_acc;
using numerics::matmul_nt_acc;
using numerics::matmul_tn_acc;

constexpr double kLayerNormEps = 1e-5;

template <typename T>
void layer_norm(const Matrix<T>& x, const Matrix<T>& gain, const Matrix<T>& bias, Matrix<T>& out,
                Matrix<T>* xhat, std::vector<T>* rstd) {
  const std::size_t n = x.rows(), d = x.cols();
  out = Matrix<T>(n, d);
  if (xhat) *xhat = Matrix<T>(n, d);
  if (rstd) rstd->assign(n, T{0});
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = x.data() + r * d;
    T mean{0};
    for (std::size_t c = 0; c < d; ++c) mean += xr[c];
    mean /= static_cast<T>(d);
    T var{0};
    for (std::size_t c = 0; c < d; ++c) {
      const T z = xr[c] - mean;
      var += z * z;
    }
    var /= static_cast<T>(d);
    const T rs = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEps));
    if (rstd) (*rstd)[r] = rs;
    for (std::size_t c = 0; c < d; ++c) {
      const T h = (xr[c] - mean) * rs;
      if (xhat) (*xhat)(r, c) = h;
      out(r, c) = h * gain.data()[c] + bias.data()[c];
    }
  }
}

// dx += LN backward; gain/bias grads accumulated when requested.
template <typename T>
void layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& xhat, const std::vector<T>& rstd,
                         const Matrix<T>& gain, Matrix<T>& dx, Matrix<T>* dgain,
                         Matrix<T>* dbias) {
  const std::size_t n = dy.rows(), d = dy.cols();
  std::vector<T> dxhat(d);
  for (std::size_t r = 0; r < n; ++r) {
    T mean_dxhat{0}, mean_dxhat_xhat{0};
    for (std::size_t c = 0; c < d; ++c) {
      dxhat[c] = dy(r, c) * gain.data()[c];
      mean_dxhat += dxhat[c];
      mean_dxhat_xhat += dxhat[c] * xhat(r, c);
    }
    mean_dxhat /= static_cast<T>(d);
    mean_dxhat_xhat /= static_cast<T>(d);
    for (std::size_t c = 0; c < d; ++c) {
      dx(r, c) += rstd[r] * (dxhat[c] - mean_dxhat - xhat(r, c) * mean_dxhat_xhat);
    }
    if (dgain) {
      for (std::size_t c = 0; c < d; ++c) dgain->data()[c] += dy(r, c) * xhat(r, c);
    }
    if (dbias) {
      for (std::size_t c = 0; c < d; ++c) dbias->data()[c] += dy(r, c);
    }
  }
}

template <typename T>
T gelu(T u) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  return T{0.5} * u * (T{1} + std::tanh(c * (u + static_cast<T>(0.044715) * u * u * u)));
}

template <typename T>
T gelu_grad(T u) {
  constexpr T c = static_cast<T>(0.7978845608028654);
  constexpr T k = static_cast<T>(0.044715);
  const T th = std::tanh(c * (u + k * u * u * u));
  return T{0.5} * (T{1} + th) + T{0.5} * u * (T{1} - th * th) * c * (T{1} + T{3} * k * u * u);
}

template <typename T>
void add_row_bias(Matrix<T>& m, const Matrix<T>& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    T* row = m.data() + r * m.cols();
    for (std::size_t c = 0; c < m.cols(); ++c) row[c] += bias.data()[c];
  }
}

template <typename T>
void sum_rows_into(const Matrix<T>& m, Matrix<T>& out) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const T* row = m.data() + r * m.cols();
    for (std::size_t c = 0; c < m.cols(); ++c) out.data()[c] += row[c];
  }
}

// x * W (+ x * delta). For low-rank deltas x * A is stored in low_out.
template <typename T>
Matrix<T> project(const Matrix<T>& x, const Matrix<T>& weight, const SiteDelta<T>* site,
                  Matrix<T>* low_out) {
  Matrix<T> out = numerics::matmul(x, weight);
  if (site == nullptr) return out;
  if (const auto* dense = std::get_if<DenseDelta<T>>(site)) {
    matmul_acc(x, dense->delta, out);
  } else {
    const auto& lr = std::get<LowRankDelta<T>>(*site);
    Matrix<T> low = numerics::matmul(x, lr.a);
    matmul_acc(low, lr.b, out);
    if (low_out) *low_out = std::move(low);
  }
  return out;
}

// Gradients of out = x*W + x*delta. dx accumulated.
template <typename T>
void project_backward(const Matrix<T>& x, const Matrix<T>& weight, const SiteDelta<T>* site,
                      const Matrix<T>& low, const Matrix<T>& dout, Matrix<T>& dx,
                      Matrix<T>* dweight, SiteDelta<T>* dsite) {
  matmul_nt_acc(dout, weight, dx);
  if (dweight) matmul_tn_acc(x, dout, *dweight);
  if (site == nullptr) return;
  if (const auto* dense = std::get_if<DenseDelta<T>>(site)) {
    matmul_nt_acc(dout, dense->delta, dx);
    if (dsite) matmul_tn_acc(x, dout, std::get<DenseDelta<T>>(*dsite).delta);
  } else {
    const auto& lr = std::get<LowRankDelta<T>>(*site);
    Matrix<T> dlow(low.rows(), low.cols());
    matmul_nt_acc(dout, lr.b, dlow);
    matmul_nt_acc(dlow, lr.a, dx);
    if (dsite) {
      auto& g = std::get<LowRankDelta<T>>(*dsite);
      matmul_tn_acc(low, dout, g.b);
      matmul_tn_acc(x, dlow, g.a);
    }
  }
}

template <typename T>
void attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v, std::size_t n_heads,
               Matrix<T>& out, std::vector<Matrix<T>>* probs_out) {
  const std::size_t n = q.rows(), d = q.cols(), hd = d / n_heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
  out = Matrix<T>(n, d);
  if (probs_out) probs_out->assign(n_heads, Matrix<T>(n, n));
  std::vector<T> p(n);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < n; ++i) {
      const T* qi = q.data() + i * d + off;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        const T* kj = k.data() + j * d + off;
        T s{0};
        for (std::size_t c = 0; c < hd; ++c) s += qi[c] * kj[c];
        p[j] = s * scale;
        mx = std::max(mx, p[j]);
      }
      T z{0};
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] = std::exp(p[j] - mx);
        z += p[j];
      }
      T* oi = out.data() + i * d + off;
      for (std::size_t j = 0; j <= i; ++j) {
        p[j] /= z;
        const T* vj = v.data() + j * d + off;
        for (std::size_t c = 0; c < hd; ++c) oi[c] += p[j] * vj[c];
        if (probs_out) (*probs_out)[h](i, j) = p[j];
      }
    }
  }
}

template <typename T>
void attention_backward(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                        const std::vector<Matrix<T>>& probs, const Matrix<T>& dout,
                        Matrix<T>& dq, Matrix<T>& dk, Matrix<T>& dv) {
  const std::size_t n = q.rows(), d = q.cols(), n_heads = probs.size(), hd = d / n_heads;
  const T scale = T{1} / std::sqrt(static_cast<T>(hd));
  std::vector<T> dp(n);
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t off = h * hd;
    const Matrix<T>& P = probs[h];
    for (std::size_t i = 0; i < n; ++i) {
      const T* doi = dout.data() + i * d + off;
      T dot{0};
      for (std::size_t j = 0; j <= i; ++j) {
        const T* vj = v.data() + j * d + off;
        T s{0};
        for (std::size_t c = 0; c < hd; ++c) s += doi[c] * vj[c];
        dp[j] = s;
        dot += P(i, j) * s;
        T* dvj = dv.data() + j * d + off;
        const T pij = P(i, j);
        for (std::size_t c = 0; c < hd; ++c) dvj[c] += pij * doi[c];
      }
      T* dqi = dq.data() + i * d + off;
      const T* qi = q.data() + i * d + off;
      for (std::size_t j = 0; j <= i; ++j) {
        const T ds = P(i, j) * (dp[j] - dot) * scale;
        if (ds == T{0}) continue;
        const T* kj = k.data() + j * d + off;
        T* dkj = dk.data() + j * d + off;
        for (std::size_t c = 0; c < hd; ++c) {
          dqi[c] += ds * kj[c];
          dkj[c] += ds * qi[c];
        }
      }
    }
  }
}

template <typename T>
bool same_structure(const SiteDelta<T>* a, const SiteDelta<T>* b) {
  if ((a == nullptr) != (b == nullptr)) return false;
  return a == nullptr || a->index() == b->index();
}

template <typename T>
Matrix<T> embed(const TransformerWeights<T>& w, std::span<const TokenId> tokens) {
  const std::size_t d = w.config.d_model;
  Matrix<T> x(tokens.size(), d);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const T* te = w.token_embedding.data() + static_cast<std::size_t>(tokens[t]) * d;
    const T* pe = w.position_embedding.data() + t * d;
    T* xr = x.data() + t * d;
    for (std::size_t c = 0; c < d; ++c) xr[c] = te[c] + pe[c];
  }
  return x;
}


}  // namespace crayon::model::kernels
