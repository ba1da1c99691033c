#include "crayon/harness/cross_task.hpp"

#include <sstream>

#include "crayon/customization/endpoints.hpp"
#include "crayon/errors.hpp"
#include "crayon/harness/evaluate.hpp"

namespace crayon::harness {

double CrossTaskMatrix::diag_mean() const {
  double s = 0.0;
  for (std::size_t i = 0; i < acc.size(); ++i) s += acc[i][i];
  return acc.empty() ? 0.0 : s / static_cast<double>(acc.size());
}

double CrossTaskMatrix::off_mean() const {
  const std::size_t k = acc.size();
  if (k < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i != j) s += acc[i][j];
    }
  }
  return s / static_cast<double>(k * (k - 1));
}

bool CrossTaskMatrix::row_dominant(std::size_t i) const {
  for (std::size_t j = 0; j < acc[i].size(); ++j) {
    if (acc[i][j] > acc[i][i]) return false;
  }
  return true;
}

std::size_t CrossTaskMatrix::dominant_rows() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < acc.size(); ++i) n += row_dominant(i) ? 1 : 0;
  return n;
}

nlohmann::json CrossTaskMatrix::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < acc.size(); ++i) rows.push_back(row_dominant(i));
  return {{"tasks", tasks},
          {"accuracy", acc},
          {"alphas", alphas},
          {"diag_mean", diag_mean()},
          {"off_diag_mean", off_mean()},
          {"margin", diag_mean() - off_mean()},
          {"row_dominant", rows},
          {"dominant_rows", dominant_rows()},
          {"diag_exceeds_off", diag_mean() > off_mean()}};
}

std::string CrossTaskMatrix::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "eval_task";
  for (const auto& t : tasks) os << ",custom_" << t;
  os << "\n";
  for (std::size_t i = 0; i < acc.size(); ++i) {
    os << tasks[i];
    for (double v : acc[i]) os << "," << v;
    os << "\n";
  }
  return os.str();
}

customization::CustomizationSet task_dc(std::span<const Record> customization,
                                        const std::string& task, std::size_t limit) {
  customization::CustomizationSet dc;
  for (const Record& r : customization) {
    if (r.task != task) continue;
    if (limit != 0 && dc.size() == limit) break;
    dc.examples.push_back({r.prompt, r.answer});
  }
  if (dc.examples.empty()) throw CountError("no customization records for task '" + task + "'");
  return dc;
}

template <typename T>
CrossTaskMatrix cross_task_matrix(const model::TransformerWeights<T>& base,
                                  const adapters::PoolBundle<T>& pool,
                                  std::span<const std::string> tasks,
                                  std::span<const customization::CustomizationSet> dcs,
                                  std::span<const Record> eval, bool normalize) {
  if (tasks.empty() || tasks.size() != dcs.size()) {
    throw CountError("cross_task_matrix needs one customization set per task");
  }
  const std::size_t k = tasks.size();
  CrossTaskMatrix m;
  m.tasks.assign(tasks.begin(), tasks.end());
  m.acc.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t j = 0; j < k; ++j) {
    const auto q = customization::user_embedding(base, dcs[j]);
    const auto wire = customization::serialize_request(
        customization::make_request(pool.indicators, q, 1000 + j, normalize));
    const auto req = customization::parse_request(wire);
    const auto adapter = customization::blend_request(pool, req, pool.checksum);
    m.alphas.push_back(req.alphas);
    const model::ModelView<T> view{&base, &adapter.delta};
    for (std::size_t i = 0; i < k; ++i) m.acc[i][j] = evaluate(view, eval, tasks[i]);
  }
  return m;
}

template CrossTaskMatrix cross_task_matrix<float>(
    const model::TransformerWeights<float>&, const adapters::PoolBundle<float>&,
    std::span<const std::string>, std::span<const customization::CustomizationSet>,
    std::span<const Record>, bool);
template CrossTaskMatrix cross_task_matrix<double>(
    const model::TransformerWeights<double>&, const adapters::PoolBundle<double>&,
    std::span<const std::string>, std::span<const customization::CustomizationSet>,
    std::span<const Record>, bool);

}  // namespace crayon::harness
