#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crayon/adapters/pool_io.hpp"
#include "crayon/customization/request.hpp"
#include "crayon/harness/tasks.hpp"

namespace crayon::harness {

// acc[i][j]: accuracy on task i of the device customized from task j's D_c.
struct CrossTaskMatrix {
  std::vector<std::string> tasks;
  std::vector<std::vector<double>> acc;
  std::vector<std::vector<double>> alphas;  // per column, as sent in the request

  double diag_mean() const;
  double off_mean() const;  // 0 for a single task
  bool row_dominant(std::size_t i) const;  // diagonal >= every entry of row i
  std::size_t dominant_rows() const;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

// The customization set of a task: its records in the customization split,
// optionally truncated to the first limit.
customization::CustomizationSet task_dc(std::span<const Record> customization,
                                        const std::string& task, std::size_t limit = 0);

// One column per task: user embedding, request round trip through the wire
// format, server blend, then evaluation on every task.
template <typename T>
CrossTaskMatrix cross_task_matrix(const model::TransformerWeights<T>& base,
                                  const adapters::PoolBundle<T>& pool,
                                  std::span<const std::string> tasks,
                                  std::span<const customization::CustomizationSet> dcs,
                                  std::span<const Record> eval, bool normalize = true);

}  // namespace crayon::harness
