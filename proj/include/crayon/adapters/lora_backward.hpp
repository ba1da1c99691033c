#pragma once

#include <span>
#include <vector>

#include "crayon/adapters/pool.hpp"
#include "crayon/model/weights.hpp"

namespace crayon::adapters {

// One training item with its own blend weights.
struct LoraExample {
  std::vector<model::TokenId> input;
  std::vector<model::TokenId> targets;
  std::vector<std::uint8_t> mask;
  BlendWeights weights;
};

// Gradient of the batch mean of per-example masked NLL with respect to every
// A_n and B_n, accumulated (+=) into grads. Alphas are constants. Returns
// the batch-mean loss.
template <typename T>
double lora_backward(const model::TransformerWeights<T>& w, const BaseAdapterPool<T>& pool,
                     std::span<const LoraExample> batch, BaseAdapterPool<T>& grads);

// Splits gradients of a stacked delta built by combine_pool(pool, weights)
// into per-adapter gradients: dA_n = dA_stack[:, n], dB_n = c_n dB_stack[n].
template <typename T>
void scatter_stacked_grads(const BaseAdapterPool<T>& pool, const BlendWeights& weights,
                           const DeltaSet<T>& stacked_grads, BaseAdapterPool<T>& grads);

}  // namespace crayon::adapters
