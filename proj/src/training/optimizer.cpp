#include "crayon/training/optimizer.hpp"

#include <atomic>
#include <cmath>
#include <numbers>

#include "crayon/errors.hpp"

namespace crayon::training {

namespace {
std::atomic<std::uint64_t> g_steps{0};
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total) {
  if (total == 0) return base_lr;
  const double progress = static_cast<double>(step) / static_cast<double>(total);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::uint64_t optimizer_steps() { return g_steps.load(); }

template <typename T>
void AdamW<T>::step(const std::vector<Matrix<T>*>& params,
                    const std::vector<const Matrix<T>*>& grads, double lr) {
  if (params.size() != grads.size()) throw CountError("AdamW: parameter/gradient count mismatch");
  if (m_.empty()) {
    for (const Matrix<T>* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw CountError("AdamW: parameter list changed between steps");
  ++t_;
  ++g_steps;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix<T>& p = *params[i];
    const Matrix<T>& g = *grads[i];
    if (!p.same_shape(g) || p.size() != m_[i].size()) {
      throw DimensionError("AdamW: gradient shape differs from parameter shape");
    }
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double gk = static_cast<double>(g.data()[k]);
      m[k] = b1 * m[k] + (1.0 - b1) * gk;
      v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      const double pk = static_cast<double>(p.data()[k]);
      p.data()[k] = static_cast<T>(
          pk - lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * pk));
    }
  }
}

namespace {

template <typename Pool, typename Out>
void collect_pool(Pool& pool, Out& out) {
  for (auto& adapter : pool.adapters) {
    for (auto& pair : adapter) {
      out.push_back(&pair.a);
      out.push_back(&pair.b);
    }
  }
}

}  // namespace

template <typename T>
std::vector<Matrix<T>*> parameters(adapters::BaseAdapterPool<T>& pool) {
  std::vector<Matrix<T>*> out;
  collect_pool(pool, out);
  return out;
}

template <typename T>
std::vector<const Matrix<T>*> parameters(const adapters::BaseAdapterPool<T>& pool) {
  std::vector<const Matrix<T>*> out;
  collect_pool(pool, out);
  return out;
}

template <typename T>
std::vector<Matrix<T>*> parameters(model::TransformerWeights<T>& w) {
  std::vector<Matrix<T>*> out;
  w.visit([&](const std::string&, Matrix<T>& m) { out.push_back(&m); });
  return out;
}

template <typename T>
std::vector<const Matrix<T>*> parameters(const model::TransformerWeights<T>& w) {
  std::vector<const Matrix<T>*> out;
  w.visit([&](const std::string&, const Matrix<T>& m) { out.push_back(&m); });
  return out;
}

#define CRAYON_INSTANTIATE(T)                                                                \
  template class AdamW<T>;                                                                   \
  template std::vector<Matrix<T>*> parameters<T>(adapters::BaseAdapterPool<T>&);             \
  template std::vector<const Matrix<T>*> parameters<T>(const adapters::BaseAdapterPool<T>&); \
  template std::vector<Matrix<T>*> parameters<T>(model::TransformerWeights<T>&);             \
  template std::vector<const Matrix<T>*> parameters<T>(const model::TransformerWeights<T>&);

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::training
