#pragma once

#include <span>
#include <string>
#include <vector>

#include "crayon/harness/tasks.hpp"
#include "crayon/model/handle.hpp"

namespace crayon::harness {

// Generated tokens before EOS equal the answer and EOS was emitted.
bool exact_match(std::span<const TokenId> generated, std::span<const TokenId> answer);

// Per-record exact-match outcome, in record order.
template <typename T>
std::vector<bool> score_records(const model::ModelView<T>& m, std::span<const Record> records,
                                std::size_t max_new = model::kDefaultMaxNew);

// Mean exact match over records whose task equals task_filter (all records
// when the filter is empty). Throws CountError when nothing is selected.
template <typename T>
double evaluate(const model::ModelView<T>& m, std::span<const Record> records,
                const std::string& task_filter = "",
                std::size_t max_new = model::kDefaultMaxNew);

}  // namespace crayon::harness
