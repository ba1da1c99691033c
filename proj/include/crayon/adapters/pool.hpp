#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "crayon/model/config.hpp"
#include "crayon/model/delta.hpp"
#include "crayon/numerics/linalg.hpp"

namespace crayon::adapters {

using model::DeltaSet;
using model::ModelConfig;
using model::SiteId;
using numerics::Matrix;

// Contributes (s/r) * a * b to the site it adapts.
template <typename T>
struct LoraPair {
  Matrix<T> a;  // d x r
  Matrix<T> b;  // r x d
};

// adapters[n][i] adapts sites[i] for base adapter n. Every adapter covers
// the same sites with the same shapes.
template <typename T>
struct BaseAdapterPool {
  std::size_t d_model = 0;
  std::size_t rank = 0;
  double scaling = 0.0;
  std::vector<SiteId> sites;
  std::vector<std::vector<LoraPair<T>>> adapters;

  std::size_t n_bases() const { return adapters.size(); }
  double scale() const { return scaling / static_cast<double>(rank); }
};

// PCA projection plus one centroid per base adapter, in adapter order.
struct IndicatorSet {
  numerics::PcaProjection pca;
  numerics::CentroidSet centroids;

  std::size_t n_bases() const { return centroids.n(); }
};

struct BlendWeights {
  std::vector<double> alphas;
  bool normalized = true;  // (cos + 1) / 2 applied, so every alpha is in [0, 1]
};

// Stacked low-rank form: per site a = [A_1 .. A_N], b = [c_1 B_1; ..; c_N B_N]
// with c_n = alpha_n * s / r.
template <typename T>
struct CustomizedAdapter {
  DeltaSet<T> delta;
  std::size_t effective_rank = 0;
  BlendWeights weights;
  std::uint64_t pool_checksum = 0;
};

// A ~ U(-1/sqrt(d), 1/sqrt(d)), B = 0, on every q/v site.
template <typename T>
BaseAdapterPool<T> init_pool(const ModelConfig& config, std::size_t n_bases, std::size_t rank,
                             double scaling, std::uint64_t seed);

template <typename T>
BaseAdapterPool<T> zeros_like(const BaseAdapterPool<T>& pool);

// Throws DimensionError / CountError on inconsistent structure, and if
// config is given, on sites or widths that do not fit the model.
template <typename T>
void check_pool(const BaseAdapterPool<T>& pool, const ModelConfig* config = nullptr);

void check_indicators(const IndicatorSet& ind);

template <typename T>
std::uint64_t pool_checksum(const BaseAdapterPool<T>& pool, const IndicatorSet& ind);

// Cosine of the projected q against each centroid, optionally mapped to
// (c + 1) / 2. Throws ZeroVectorError if the projection of q is zero.
BlendWeights alpha_from_embedding(const IndicatorSet& ind, std::span<const double> q,
                                  bool normalize = true);

// All alphas equal to one; the single-adapter path.
BlendWeights constant_weights(std::size_t n_bases);

// Per-site delta (s/r) * sum_n alpha_n A_n B_n in stacked low-rank form.
template <typename T>
DeltaSet<T> combine_pool(const BaseAdapterPool<T>& pool, const BlendWeights& w);

template <typename T>
CustomizedAdapter<T> blend_customized(const BaseAdapterPool<T>& pool, const BlendWeights& w,
                                      std::uint64_t pool_checksum = 0);

// Reference sum over adapters, one dense matrix per site.
template <typename T>
DeltaSet<T> dense_blend(const BaseAdapterPool<T>& pool, const BlendWeights& w);

}  // namespace crayon::adapters
