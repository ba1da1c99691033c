#include "crayon/adapters/lora_backward.hpp"

#include <string>

#include "crayon/errors.hpp"
#include "crayon/model/loss.hpp"
#include "crayon/model/transformer.hpp"

namespace crayon::adapters {

template <typename T>
void scatter_stacked_grads(const BaseAdapterPool<T>& pool, const BlendWeights& weights,
                           const DeltaSet<T>& stacked_grads, BaseAdapterPool<T>& grads) {
  const std::size_t r = pool.rank, d = pool.d_model;
  for (std::size_t s = 0; s < pool.sites.size(); ++s) {
    const auto* site = stacked_grads.site(pool.sites[s].layer, pool.sites[s].projection);
    const auto* lr = site ? std::get_if<model::LowRankDelta<T>>(site) : nullptr;
    if (!lr) throw DimensionError("missing stacked gradient for " + model::site_name(pool.sites[s]));
    for (std::size_t n = 0; n < pool.n_bases(); ++n) {
      const T c = static_cast<T>(weights.alphas[n] * pool.scale());
      LoraPair<T>& g = grads.adapters[n][s];
      for (std::size_t row = 0; row < d; ++row) {
        for (std::size_t k = 0; k < r; ++k) g.a(row, k) += lr->a(row, n * r + k);
      }
      for (std::size_t k = 0; k < r; ++k) {
        for (std::size_t col = 0; col < d; ++col) g.b(k, col) += c * lr->b(n * r + k, col);
      }
    }
  }
}

template <typename T>
double lora_backward(const model::TransformerWeights<T>& w, const BaseAdapterPool<T>& pool,
                     std::span<const LoraExample> batch, BaseAdapterPool<T>& grads) {
  if (batch.empty()) throw CountError("lora_backward: empty batch");
  if (grads.n_bases() != pool.n_bases() || grads.sites.size() != pool.sites.size()) {
    throw DimensionError("lora_backward: gradient buffer does not match the pool");
  }
  const T inv_batch = static_cast<T>(1.0 / static_cast<double>(batch.size()));
  double total = 0.0;
  for (const LoraExample& ex : batch) {
    const DeltaSet<T> delta = combine_pool(pool, ex.weights);
    model::ForwardTrace<T> trace;
    const Matrix<T> logits =
        model::forward(w, &delta, std::span<const model::TokenId>(ex.input), &trace);
    Matrix<T> dlogits;
    total += model::nll_loss_grad(logits, std::span<const model::TokenId>(ex.targets),
                                  std::span<const std::uint8_t>(ex.mask), dlogits);
    numerics::scale_inplace(dlogits, inv_batch);
    DeltaSet<T> stacked = model::zeros_like(delta);
    model::backward(w, &delta, trace, dlogits, &stacked,
                    static_cast<model::TransformerWeights<T>*>(nullptr));
    scatter_stacked_grads(pool, ex.weights, stacked, grads);
  }
  return total / static_cast<double>(batch.size());
}

#define CRAYON_INSTANTIATE(T)                                                                \
  template double lora_backward<T>(const model::TransformerWeights<T>&,                      \
                                   const BaseAdapterPool<T>&, std::span<const LoraExample>,  \
                                   BaseAdapterPool<T>&);                                     \
  template void scatter_stacked_grads<T>(const BaseAdapterPool<T>&, const BlendWeights&,     \
                                         const DeltaSet<T>&, BaseAdapterPool<T>&);

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::adapters
