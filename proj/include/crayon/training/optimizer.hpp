#pragma once

#include <cstdint>
#include <vector>

#include "crayon/adapters/pool.hpp"
#include "crayon/model/weights.hpp"

namespace crayon::training {

using numerics::Matrix;

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// lr * (1 + cos(pi * step / total)) / 2; zero at step == total.
double cosine_lr(double base_lr, std::size_t step, std::size_t total);

// Process-wide count of AdamW steps taken; instrumentation for code paths
// that must not train.
std::uint64_t optimizer_steps();

// Decoupled weight decay. Moments are kept in double whatever T is.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig config) : config_(config) {}

  // params[i] -= update(grads[i]). The parameter list must keep the same
  // shapes and order across calls.
  void step(const std::vector<Matrix<T>*>& params, const std::vector<const Matrix<T>*>& grads,
            double lr);

  std::size_t steps() const { return t_; }

 private:
  AdamWConfig config_;
  std::size_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

template <typename T>
std::vector<Matrix<T>*> parameters(adapters::BaseAdapterPool<T>& pool);
template <typename T>
std::vector<const Matrix<T>*> parameters(const adapters::BaseAdapterPool<T>& pool);
template <typename T>
std::vector<Matrix<T>*> parameters(model::TransformerWeights<T>& w);
template <typename T>
std::vector<const Matrix<T>*> parameters(const model::TransformerWeights<T>& w);

}  // namespace crayon::training
