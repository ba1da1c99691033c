#include "crayon/model/sequence.hpp"

#include "crayon/errors.hpp"

namespace crayon::model {

EncodedSequence encode_example(std::span<const TokenId> prompt, std::span<const TokenId> answer) {
  if (prompt.empty()) throw CountError("encode_example: empty prompt");
  std::vector<TokenId> full = answer_context(prompt);
  full.insert(full.end(), answer.begin(), answer.end());
  full.push_back(kEos);
  EncodedSequence s;
  s.input.assign(full.begin(), full.end() - 1);
  s.targets.assign(full.begin() + 1, full.end());
  s.mask.assign(s.input.size(), 0);
  for (std::size_t i = prompt.size() + 1; i < s.input.size(); ++i) s.mask[i] = 1;
  return s;
}

std::vector<TokenId> answer_context(std::span<const TokenId> prompt) {
  std::vector<TokenId> ctx;
  ctx.reserve(prompt.size() + 2);
  ctx.push_back(kBos);
  ctx.insert(ctx.end(), prompt.begin(), prompt.end());
  ctx.push_back(kSep);
  return ctx;
}

ParsedAnswer parse_answer(std::span<const TokenId> generated) {
  ParsedAnswer p;
  for (TokenId t : generated) {
    if (t == kEos) {
      p.terminated = true;
      break;
    }
    p.tokens.push_back(t);
  }
  return p;
}

}  // namespace crayon::model
