#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "crayon/adapters/pool_io.hpp"
#include "crayon/harness/tasks.hpp"
#include "crayon/hybrid/routing.hpp"
#include "crayon/model/config.hpp"
#include "crayon/training/config.hpp"
#include "crayon/training/pool_training.hpp"

namespace crayon::harness {

struct HybridSettings {
  double ratio = 0.2;
  hybrid::Scorer scorer = hybrid::Scorer::prototype;
  // Per-user calibration and evaluation mixes: set_size records, of which
  // matched_fraction come from the user's task and the rest evenly from the
  // other tasks.
  std::size_t set_size = 200;
  double matched_fraction = 0.8;
  std::vector<double> sweep_ratios{0.1, 0.2, 0.3};
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  model::Precision precision = model::Precision::f32;
  bool deterministic = true;
  double window_prob = 0.9;
  SplitCounts counts;
  model::ModelConfig device;
  model::ModelConfig server;
  training::PretrainConfig device_pretrain;
  training::PretrainConfig server_pretrain;
  training::TrainConfig pool;
  HybridSettings hybrid;
  std::vector<std::size_t> dc_sizes{1, 2, 5, 10};
  std::vector<std::size_t> ranks{1, 2, 4, 8};

  // Desk benchmark: device 64/2/4, server 128/4/8, N=8 r=4.
  static PipelineConfig defaults();
  // Seconds-scale variant for tests.
  static PipelineConfig smoke();

  void validate() const;
  // Component seeds derived from the global seed.
  PipelineConfig resolved() const;
};

nlohmann::json to_json(const PipelineConfig& c);
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);

// Per-user query mix: the first matched records of task, then the first
// records of each other task in task order.
std::vector<Record> mixed_set(std::span<const Record> records, const std::string& task,
                              std::span<const std::string> tasks, std::size_t total,
                              double matched_fraction);

// Lazily built, cached artifacts of one benchmark run. Every stage is a
// deterministic function of the resolved config and the stages before it.
template <typename T>
class Pipeline {
 public:
  explicit Pipeline(PipelineConfig cfg);

  const PipelineConfig& config() const { return cfg_; }

  const std::vector<TaskSpec>& tasks();
  std::vector<std::string> task_names();
  const Corpus& corpus();
  std::shared_ptr<const model::TransformerWeights<T>> device();
  const adapters::PoolBundle<T>& pool();
  // Training log with task tags attached to the alpha records.
  const training::TrainLog& pool_log();
  const model::TransformerWeights<T>& server();
  // N=1 with every alpha 1, same budget as the pool.
  const adapters::BaseAdapterPool<T>& single_lora();

  void set_data(std::vector<TaskSpec> tasks, Corpus corpus);
  void set_device(model::TransformerWeights<T> w);
  void set_pool(adapters::PoolBundle<T> bundle);
  void set_server(model::TransformerWeights<T> w);

  // Wall seconds of each stage that was computed here.
  const std::map<std::string, double>& timings() const { return timings_; }

 private:
  PipelineConfig cfg_;
  std::optional<std::vector<TaskSpec>> tasks_;
  std::optional<Corpus> corpus_;
  std::shared_ptr<const model::TransformerWeights<T>> device_;
  std::optional<adapters::PoolBundle<T>> pool_;
  std::optional<training::TrainLog> pool_log_;
  std::optional<model::TransformerWeights<T>> server_;
  std::optional<adapters::BaseAdapterPool<T>> single_;
  std::map<std::string, double> timings_;
};

}  // namespace crayon::harness
