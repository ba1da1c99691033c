#include "crayon/harness/evaluate.hpp"

#include <algorithm>

#include "crayon/errors.hpp"
#include "crayon/model/sequence.hpp"

namespace crayon::harness {

bool exact_match(std::span<const TokenId> generated, std::span<const TokenId> answer) {
  const model::ParsedAnswer p = model::parse_answer(generated);
  return p.terminated && std::ranges::equal(p.tokens, answer);
}

template <typename T>
std::vector<bool> score_records(const model::ModelView<T>& m, std::span<const Record> records,
                                std::size_t max_new) {
  std::vector<bool> out;
  out.reserve(records.size());
  for (const Record& r : records) {
    const auto d = model::answer_query(m, std::span<const TokenId>(r.prompt), max_new);
    out.push_back(exact_match(d.tokens, r.answer));
  }
  return out;
}

template <typename T>
double evaluate(const model::ModelView<T>& m, std::span<const Record> records,
                const std::string& task_filter, std::size_t max_new) {
  std::vector<Record> chosen;
  for (const Record& r : records) {
    if (task_filter.empty() || r.task == task_filter) chosen.push_back(r);
  }
  if (chosen.empty()) throw CountError("evaluate: no records selected");
  const auto hits = score_records(m, std::span<const Record>(chosen), max_new);
  return static_cast<double>(std::count(hits.begin(), hits.end(), true)) /
         static_cast<double>(hits.size());
}

#define CRAYON_INSTANTIATE(T)                                                                  \
  template std::vector<bool> score_records<T>(const model::ModelView<T>&,                      \
                                              std::span<const Record>, std::size_t);           \
  template double evaluate<T>(const model::ModelView<T>&, std::span<const Record>,             \
                              const std::string&, std::size_t);

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::harness
