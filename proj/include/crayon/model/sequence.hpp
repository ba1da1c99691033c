#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "crayon/model/config.hpp"

namespace crayon::model {

// Symbols 0..25 are letters; the rest of the 32-entry vocabulary is special.
inline constexpr TokenId kAlphabetSize = 26;
inline constexpr TokenId kPad = 26;
inline constexpr TokenId kBos = 27;
inline constexpr TokenId kSep = 28;
inline constexpr TokenId kEos = 29;
inline constexpr std::size_t kVocabSize = 32;

// Layout BOS prompt SEP answer EOS. input/targets are the layout shifted by
// one; mask selects the positions whose target is an answer token or EOS.
struct EncodedSequence {
  std::vector<TokenId> input;
  std::vector<TokenId> targets;
  std::vector<std::uint8_t> mask;
};

EncodedSequence encode_example(std::span<const TokenId> prompt, std::span<const TokenId> answer);

// BOS prompt SEP: what the model sees before answering.
std::vector<TokenId> answer_context(std::span<const TokenId> prompt);

// Generated tokens before the first EOS.
struct ParsedAnswer {
  std::vector<TokenId> tokens;
  bool terminated = false;  // EOS was produced
};
ParsedAnswer parse_answer(std::span<const TokenId> generated);

}  // namespace crayon::model
