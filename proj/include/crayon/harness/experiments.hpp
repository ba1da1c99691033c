#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "crayon/harness/cross_task.hpp"
#include "crayon/harness/pipeline.hpp"

namespace crayon::harness {

struct ExperimentResult {
  std::string name;
  nlohmann::json report;
  std::vector<std::pair<std::string, std::string>> files;  // file name, bytes
};

// diagonal-dominance, alpha-diversity, pca-ablation, routing-sweep,
// dc-size-sweep, rank-sweep, single-lora-baseline.
const std::vector<std::string>& experiment_names();

// Throws RangeError on an unknown name.
template <typename T>
ExperimentResult run_experiment(const std::string& name, Pipeline<T>& p);

// Writes <name>.json and the result's files under dir.
void write_experiment(const std::filesystem::path& dir, const ExperimentResult& r);

// Alpha record of every record under the trainer's alpha settings, tagged
// with the record's task.
template <typename T>
std::vector<training::AlphaRecord> alpha_records(const model::TransformerWeights<T>& w,
                                                 const adapters::IndicatorSet& ind,
                                                 std::span<const Record> records,
                                                 const training::TrainConfig& cfg);

template <typename T>
CrossTaskMatrix pipeline_cross_matrix(Pipeline<T>& p, std::size_t dc_limit = 0);

// Evaluation report over the core experiments (and both sweeps when
// with_sweeps). Holds no timings, so identical runs give identical bytes.
struct BenchmarkRun {
  nlohmann::json report;
  std::vector<ExperimentResult> experiments;
};

template <typename T>
BenchmarkRun run_benchmark(Pipeline<T>& p, bool with_sweeps);

// 20 equal bins over [0, 1]; values outside are clamped into the end bins.
std::vector<std::size_t> histogram(std::span<const double> values, std::size_t bins = 20);

}  // namespace crayon::harness

#include "crayon/customization/endpoints.hpp"

namespace crayon::harness {

// One user's customization round trip. The device sends its request; the
// server operator blends it, scores the calibration mix on the customized
// device under both scorers, builds prototypes from the uncustomized server
// and calibrates the threshold for the requested ratio and scorer; the
// package is served and applied.
struct UserDeployment {
  customization::CustomizationRequest request;
  std::string request_bytes;
  std::string package_bytes;
  hybrid::PrototypeSet prototypes;
  std::vector<double> prototype_scores;    // calibration mix, in record order
  std::vector<double> max_softmax_scores;  // same decodes
  hybrid::Calibration calibration;         // for the requested scorer
};

template <typename T>
UserDeployment deploy_user(customization::BlendServer<T>& blend_server,
                           customization::DeviceRuntime<T>& runtime,
                           const model::ModelView<T>& server,
                           const customization::CustomizationSet& dc,
                           std::span<const Record> calibration, double ratio,
                           hybrid::Scorer scorer);

}  // namespace crayon::harness
