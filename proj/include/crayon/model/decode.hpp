#pragma once

#include <optional>
#include <span>
#include <vector>

#include "crayon/model/delta.hpp"
#include "crayon/model/weights.hpp"

namespace crayon::model {

struct DecodeResult {
  std::vector<TokenId> tokens;
  // Softmax distribution that produced each generated token (steps x vocab).
  numerics::MatrixD distributions;
  bool stopped = false;  // stop token emitted before max_new
};

// Greedy (argmax, lowest id wins ties) decoding with a key/value cache.
// The stop token, when emitted, is included in the result.
template <typename T>
DecodeResult greedy_decode(const TransformerWeights<T>& w, const DeltaSet<T>* delta,
                           std::span<const TokenId> prompt, std::size_t max_new,
                           std::optional<TokenId> stop_token = std::nullopt);

}  // namespace crayon::model
