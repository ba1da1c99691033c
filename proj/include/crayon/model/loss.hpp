#pragma once

#include <cstdint>
#include <span>

#include "crayon/model/config.hpp"
#include "crayon/numerics/matrix.hpp"

namespace crayon::model {

// Mean over masked positions of -log softmax(logits[t])[targets[t]].
template <typename T>
double nll_loss(const numerics::Matrix<T>& logits, std::span<const TokenId> targets,
                std::span<const std::uint8_t> mask);

// As nll_loss, and writes d(loss)/d(logits) into dlogits (resized).
template <typename T>
double nll_loss_grad(const numerics::Matrix<T>& logits, std::span<const TokenId> targets,
                     std::span<const std::uint8_t> mask, numerics::Matrix<T>& dlogits);

}  // namespace crayon::model
