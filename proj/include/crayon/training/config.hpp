#pragma once

#include <cstdint>

#include <json.hpp>

#include "crayon/training/optimizer.hpp"

namespace crayon::training {

struct TrainConfig {
  std::size_t n_bases = 8;
  std::size_t rank = 4;
  double scaling = 4.0;
  std::size_t pca_dim = 16;
  bool use_pca = true;          // false: identity projection, no centring
  bool normalize_alpha = true;  // alpha = (cos + 1) / 2
  bool constant_alpha = false;  // every alpha = 1; the single-adapter trainer
  AdamWConfig optimizer{1e-2, 0.9, 0.999, 1e-8, 0.01};
  std::size_t batch_size = 32;
  std::size_t max_iters = 300;
  std::uint64_t seed = 1;
  std::size_t embedding_sample_cap = 10000;

  // Throws CountError / RangeError.
  void validate() const;

  // Settings for a multi-billion-parameter base: N=32, r=4, s=4, AdamW lr
  // 1e-4 cosine, batch 128, 800 iterations.
  static TrainConfig large_scale();
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// Full-parameter next-token training of a base model.
struct PretrainConfig {
  AdamWConfig optimizer{3e-3, 0.9, 0.98, 1e-8, 0.01};
  std::size_t batch_size = 32;
  std::size_t max_iters = 1000;
  std::uint64_t seed = 1;
};

nlohmann::json to_json(const PretrainConfig& c);
PretrainConfig pretrain_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const AdamWConfig& c);
AdamWConfig adamw_from_json(const nlohmann::json& j);

}  // namespace crayon::training
