#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "crayon/adapters/pool.hpp"
#include "crayon/model/tensor_file.hpp"

namespace crayon::adapters {

template <typename T>
struct PoolBundle {
  BaseAdapterPool<T> pool;
  IndicatorSet indicators;
  std::uint64_t checksum = 0;  // pool_checksum(pool, indicators)
};

// Tensor file of kind "adapter_pool". The "pool" manifest section records
// n_bases, rank, scaling, sites, pca, centroids and checksum.
template <typename T>
std::string serialize_pool(const BaseAdapterPool<T>& pool, const IndicatorSet& ind);
template <typename T>
void save_pool(const std::filesystem::path& path, const BaseAdapterPool<T>& pool,
               const IndicatorSet& ind);

// Throws MismatchError naming the offending field when the manifest and
// the tensors disagree, ChecksumMismatchError when the recorded checksum
// does not match the loaded content.
template <typename T>
PoolBundle<T> pool_from_file(const model::TensorFile& f);
template <typename T>
PoolBundle<T> load_pool(const std::filesystem::path& path);

// Shared by the pool file and deployment packages.
nlohmann::json pca_to_json(const numerics::PcaProjection& p);
void add_indicator_tensors(model::TensorFileWriter& w, const IndicatorSet& ind);
IndicatorSet indicators_from_file(const model::TensorFile& f);

}  // namespace crayon::adapters
