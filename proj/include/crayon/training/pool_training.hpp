#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crayon/adapters/pool.hpp"
#include "crayon/model/weights.hpp"
#include "crayon/numerics/rng.hpp"
#include "crayon/training/config.hpp"

namespace crayon::training {

using model::TokenId;

// A training item as the trainer sees it: no task label exists here.
struct Example {
  std::vector<TokenId> prompt;
  std::vector<TokenId> answer;
};

struct AlphaRecord {
  std::size_t example = 0;  // index into the training corpus
  std::string task;         // filled by the caller, never by the trainer
  std::vector<double> alphas;
};

struct TrainLog {
  std::vector<double> loss;  // batch-mean loss per iteration
  std::vector<double> lr;
  std::vector<AlphaRecord> alphas;  // one record per training example
  double wall_seconds = 0.0;

  // One JSON object per line: iterations first, then alpha records.
  std::string to_jsonl() const;
};

// Copies task tags into the alpha records by example index.
void attach_tasks(TrainLog& log, std::span<const std::string> tasks);

// Layer-1 pooled query of BOS prompt SEP for up to cap examples. When the
// corpus is larger than cap a seeded subset is drawn; rows keep corpus order.
template <typename T>
numerics::MatrixD extract_embeddings(const model::TransformerWeights<T>& w,
                                     std::span<const Example> corpus, std::size_t cap,
                                     std::uint64_t seed);

// PCA (or the identity when use_pca is off), then k-means with k = n_bases.
adapters::IndicatorSet build_indicators(const numerics::MatrixD& embeddings,
                                        const TrainConfig& cfg);

// Blend weights for one prompt under the trainer's alpha settings.
template <typename T>
adapters::BlendWeights example_weights(const model::TransformerWeights<T>& w,
                                       const adapters::IndicatorSet& ind,
                                       std::span<const TokenId> prompt, const TrainConfig& cfg);

template <typename T>
struct PoolTrainResult {
  adapters::BaseAdapterPool<T> pool;
  TrainLog log;
};

// Joint training of the base adapters; the base weights are read-only.
template <typename T>
PoolTrainResult<T> train_pool(const model::TransformerWeights<T>& w,
                              std::span<const Example> corpus, const adapters::IndicatorSet& ind,
                              const TrainConfig& cfg);

// Index stream for epoch-shuffled minibatches.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed);
  std::vector<std::size_t> next(std::size_t batch_size);

 private:
  numerics::SplitMix64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

struct TaskAlphaStats {
  std::size_t count = 0;
  std::vector<double> mean;  // per adapter
  std::vector<double> std;   // per adapter, population
};

struct AlphaDiversityReport {
  std::map<std::string, TaskAlphaStats> tasks;
  // Per adapter: largest |mean_a - mean_b| over task pairs.
  std::vector<double> max_mean_gap;
  // Per adapter std over all records, and its average over adapters.
  std::vector<double> overall_std;
  double mean_overall_std = 0.0;

  // (task, adapter) entries whose mean is at least gap away from the mean
  // of some other task for the same adapter.
  std::size_t pairs_with_gap(double gap) const;
  nlohmann::json to_json() const;
};

// Throws CountError on an empty log or a record without a task tag.
AlphaDiversityReport alpha_diversity_report(std::span<const AlphaRecord> records);

}  // namespace crayon::training
