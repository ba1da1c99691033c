#include "crayon/model/handle.hpp"

#include "crayon/errors.hpp"
#include "crayon/model/sequence.hpp"

namespace crayon::model {

template <typename T>
DecodeResult answer_query(const ModelView<T>& m, std::span<const TokenId> prompt,
                          std::size_t max_new) {
  if (m.weights == nullptr) throw Error("answer_query: model view has no weights");
  const auto ctx = answer_context(prompt);
  return greedy_decode(*m.weights, m.delta, std::span<const TokenId>(ctx), max_new, kEos);
}

template DecodeResult answer_query<float>(const ModelView<float>&, std::span<const TokenId>,
                                          std::size_t);
template DecodeResult answer_query<double>(const ModelView<double>&, std::span<const TokenId>,
                                           std::size_t);

}  // namespace crayon::model
