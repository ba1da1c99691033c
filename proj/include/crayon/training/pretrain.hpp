#pragma once

#include <span>
#include <vector>

#include "crayon/model/weights.hpp"
#include "crayon/training/config.hpp"
#include "crayon/training/pool_training.hpp"

namespace crayon::training {

template <typename T>
struct PretrainResult {
  model::TransformerWeights<T> weights;
  std::vector<double> loss;  // batch-mean loss per iteration
};

// Trains every base parameter on the answer positions of the corpus, from
// init_weights(config, derive_seed(seed, 0)).
template <typename T>
PretrainResult<T> pretrain(const model::ModelConfig& config, std::span<const Example> corpus,
                           const PretrainConfig& cfg);

}  // namespace crayon::training
