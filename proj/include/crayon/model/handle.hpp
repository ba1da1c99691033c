#pragma once

#include <span>

#include "crayon/model/decode.hpp"
#include "crayon/model/delta.hpp"
#include "crayon/model/weights.hpp"

namespace crayon::model {

// Base weights plus an optional adapter delta; both must outlive the view.
template <typename T>
struct ModelView {
  const TransformerWeights<T>* weights = nullptr;
  const DeltaSet<T>* delta = nullptr;
};

// Answer slots for the longest prompt plus the EOS step.
inline constexpr std::size_t kDefaultMaxNew = 9;

// Greedy answer to a prompt: decodes after BOS prompt SEP, stops at EOS.
template <typename T>
DecodeResult answer_query(const ModelView<T>& m, std::span<const TokenId> prompt,
                          std::size_t max_new = kDefaultMaxNew);

}  // namespace crayon::model
