#include "crayon/adapters/pool.hpp"

#include <cmath>
#include <string>

#include "crayon/errors.hpp"
#include "crayon/numerics/rng.hpp"

namespace crayon::adapters {

namespace {

void hash_bytes(std::uint64_t& h, const void* data, std::size_t n) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ULL;
  }
}

// Values are hashed as doubles, so a pool and its exact conversion to the
// other precision share a checksum.
template <typename T>
void hash_matrix(std::uint64_t& h, const Matrix<T>& m) {
  const std::uint64_t shape[2] = {m.rows(), m.cols()};
  hash_bytes(h, shape, sizeof(shape));
  for (const T v : m.values()) {
    const double wide = static_cast<double>(v);
    hash_bytes(h, &wide, sizeof(double));
  }
}

template <typename T>
void check_weights(const BaseAdapterPool<T>& pool, const BlendWeights& w) {
  if (w.alphas.size() != pool.n_bases()) {
    throw CountError("blend weights hold " + std::to_string(w.alphas.size()) +
                     " alphas, pool has " + std::to_string(pool.n_bases()) + " base adapters");
  }
  for (double a : w.alphas) {
    if (!std::isfinite(a)) throw NonFiniteError("blend weights contain a non-finite alpha");
  }
}

}  // namespace

template <typename T>
BaseAdapterPool<T> init_pool(const ModelConfig& config, std::size_t n_bases, std::size_t rank,
                             double scaling, std::uint64_t seed) {
  config.validate();
  if (n_bases < 1) throw CountError("pool needs at least one base adapter");
  if (rank < 1) throw CountError("LoRA rank must be >= 1");
  BaseAdapterPool<T> pool;
  pool.d_model = config.d_model;
  pool.rank = rank;
  pool.scaling = scaling;
  pool.sites = model::adapted_sites(config.n_layers);
  numerics::SplitMix64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  pool.adapters.resize(n_bases);
  for (auto& adapter : pool.adapters) {
    for (std::size_t s = 0; s < pool.sites.size(); ++s) {
      LoraPair<T> p{Matrix<T>(config.d_model, rank), Matrix<T>(rank, config.d_model)};
      for (auto& v : p.a.values()) v = static_cast<T>(rng.uniform(-bound, bound));
      adapter.push_back(std::move(p));
    }
  }
  return pool;
}

template <typename T>
BaseAdapterPool<T> zeros_like(const BaseAdapterPool<T>& pool) {
  BaseAdapterPool<T> z = pool;
  for (auto& adapter : z.adapters) {
    for (auto& p : adapter) {
      p.a.set_zero();
      p.b.set_zero();
    }
  }
  return z;
}

template <typename T>
void check_pool(const BaseAdapterPool<T>& pool, const ModelConfig* config) {
  if (pool.n_bases() < 1) throw CountError("pool has no base adapters");
  if (pool.rank < 1) throw CountError("pool rank must be >= 1");
  for (std::size_t n = 0; n < pool.n_bases(); ++n) {
    if (pool.adapters[n].size() != pool.sites.size()) {
      throw CountError("base adapter " + std::to_string(n) + " covers " +
                       std::to_string(pool.adapters[n].size()) + " sites, pool declares " +
                       std::to_string(pool.sites.size()));
    }
    for (const auto& p : pool.adapters[n]) {
      if (p.a.rows() != pool.d_model || p.a.cols() != pool.rank || p.b.rows() != pool.rank ||
          p.b.cols() != pool.d_model) {
        throw DimensionError("base adapter " + std::to_string(n) + " has factors " +
                             numerics::shape_string(p.a) + " / " + numerics::shape_string(p.b));
      }
    }
  }
  if (config) {
    if (config->d_model != pool.d_model) {
      throw DimensionError("pool width " + std::to_string(pool.d_model) + " vs model d_model " +
                           std::to_string(config->d_model));
    }
    for (const SiteId& s : pool.sites) {
      if (s.layer >= config->n_layers) {
        throw DimensionError("pool adapts " + model::site_name(s) + " beyond n_layers");
      }
    }
  }
}

void check_indicators(const IndicatorSet& ind) {
  if (ind.centroids.n() < 1) throw CountError("indicator set has no centroids");
  if (ind.centroids.dim() != ind.pca.out_dim()) {
    throw DimensionError("centroid dimension " + std::to_string(ind.centroids.dim()) +
                         " differs from PCA output dimension " +
                         std::to_string(ind.pca.out_dim()));
  }
  if (ind.pca.components.cols() != ind.pca.input_dim()) {
    throw DimensionError("PCA components do not match the PCA mean");
  }
}

template <typename T>
std::uint64_t pool_checksum(const BaseAdapterPool<T>& pool, const IndicatorSet& ind) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const std::uint64_t header[3] = {pool.n_bases(), pool.rank, pool.d_model};
  hash_bytes(h, header, sizeof(header));
  hash_bytes(h, &pool.scaling, sizeof(double));
  for (const auto& adapter : pool.adapters) {
    for (const auto& p : adapter) {
      hash_matrix(h, p.a);
      hash_matrix(h, p.b);
    }
  }
  hash_bytes(h, ind.pca.mean.data(), ind.pca.mean.size() * sizeof(double));
  hash_matrix(h, ind.pca.components);
  hash_matrix(h, ind.centroids.centroids);
  return h;
}

BlendWeights alpha_from_embedding(const IndicatorSet& ind, std::span<const double> q,
                                  bool normalize) {
  check_indicators(ind);
  const std::vector<double> z = numerics::pca_project(ind.pca, q);
  BlendWeights w;
  w.normalized = normalize;
  w.alphas.reserve(ind.n_bases());
  for (std::size_t n = 0; n < ind.n_bases(); ++n) {
    const double c = numerics::cosine_similarity(z, ind.centroids.centroids.row(n));
    w.alphas.push_back(normalize ? (c + 1.0) / 2.0 : c);
  }
  return w;
}

BlendWeights constant_weights(std::size_t n_bases) {
  return BlendWeights{std::vector<double>(n_bases, 1.0), true};
}

template <typename T>
DeltaSet<T> combine_pool(const BaseAdapterPool<T>& pool, const BlendWeights& w) {
  check_weights(pool, w);
  const std::size_t n = pool.n_bases(), r = pool.rank, d = pool.d_model;
  std::vector<T> coeff(n);
  for (std::size_t i = 0; i < n; ++i) coeff[i] = static_cast<T>(w.alphas[i] * pool.scale());

  DeltaSet<T> out;
  for (std::size_t s = 0; s < pool.sites.size(); ++s) {
    model::LowRankDelta<T> lr{Matrix<T>(d, n * r), Matrix<T>(n * r, d)};
    for (std::size_t i = 0; i < n; ++i) {
      const LoraPair<T>& p = pool.adapters[i][s];
      for (std::size_t row = 0; row < d; ++row) {
        for (std::size_t k = 0; k < r; ++k) lr.a(row, i * r + k) = p.a(row, k);
      }
      for (std::size_t k = 0; k < r; ++k) {
        for (std::size_t col = 0; col < d; ++col) lr.b(i * r + k, col) = coeff[i] * p.b(k, col);
      }
    }
    out.set(pool.sites[s], std::move(lr));
  }
  return out;
}

template <typename T>
CustomizedAdapter<T> blend_customized(const BaseAdapterPool<T>& pool, const BlendWeights& w,
                                      std::uint64_t checksum) {
  CustomizedAdapter<T> c;
  c.delta = combine_pool(pool, w);
  c.effective_rank = pool.n_bases() * pool.rank;
  c.weights = w;
  c.pool_checksum = checksum;
  return c;
}

template <typename T>
DeltaSet<T> dense_blend(const BaseAdapterPool<T>& pool, const BlendWeights& w) {
  check_weights(pool, w);
  DeltaSet<T> out;
  for (std::size_t s = 0; s < pool.sites.size(); ++s) {
    Matrix<double> acc(pool.d_model, pool.d_model);
    for (std::size_t i = 0; i < pool.n_bases(); ++i) {
      const Matrix<double> ab = numerics::matmul(numerics::cast<double>(pool.adapters[i][s].a),
                                                 numerics::cast<double>(pool.adapters[i][s].b));
      const double c = w.alphas[i] * pool.scale();
      for (std::size_t k = 0; k < acc.size(); ++k) acc.data()[k] += c * ab.data()[k];
    }
    out.set(pool.sites[s], model::DenseDelta<T>{numerics::cast<T>(acc)});
  }
  return out;
}

#define CRAYON_INSTANTIATE(T)                                                                 \
  template BaseAdapterPool<T> init_pool<T>(const ModelConfig&, std::size_t, std::size_t,     \
                                           double, std::uint64_t);                            \
  template BaseAdapterPool<T> zeros_like<T>(const BaseAdapterPool<T>&);                       \
  template void check_pool<T>(const BaseAdapterPool<T>&, const ModelConfig*);                 \
  template std::uint64_t pool_checksum<T>(const BaseAdapterPool<T>&, const IndicatorSet&);    \
  template DeltaSet<T> combine_pool<T>(const BaseAdapterPool<T>&, const BlendWeights&);       \
  template CustomizedAdapter<T> blend_customized<T>(const BaseAdapterPool<T>&,                \
                                                    const BlendWeights&, std::uint64_t);      \
  template DeltaSet<T> dense_blend<T>(const BaseAdapterPool<T>&, const BlendWeights&);

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::adapters
