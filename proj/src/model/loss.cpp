#include "crayon/model/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "crayon/errors.hpp"

namespace crayon::model {

namespace {

template <typename T>
std::size_t check(const numerics::Matrix<T>& logits, std::span<const TokenId> targets,
                  std::span<const std::uint8_t> mask) {
  if (targets.size() != logits.rows() || mask.size() != logits.rows()) {
    throw DimensionError("nll_loss: " + std::to_string(logits.rows()) + " logit rows, " +
                         std::to_string(targets.size()) + " targets, " +
                         std::to_string(mask.size()) + " mask entries");
  }
  std::size_t count = 0;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    if (!mask[t]) continue;
    ++count;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= logits.cols()) {
      throw RangeError("nll_loss: target id " + std::to_string(targets[t]) + " out of range");
    }
  }
  if (count == 0) throw CountError("nll_loss: mask selects no positions");
  return count;
}

}  // namespace

template <typename T>
double nll_loss(const numerics::Matrix<T>& logits, std::span<const TokenId> targets,
                std::span<const std::uint8_t> mask) {
  const std::size_t count = check(logits, targets, mask);
  double total = 0.0;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    if (!mask[t]) continue;
    auto row = logits.row(t);
    const double mx = static_cast<double>(*std::max_element(row.begin(), row.end()));
    double z = 0.0;
    for (T v : row) z += std::exp(static_cast<double>(v) - mx);
    total += mx + std::log(z) - static_cast<double>(row[static_cast<std::size_t>(targets[t])]);
  }
  return total / static_cast<double>(count);
}

template <typename T>
double nll_loss_grad(const numerics::Matrix<T>& logits, std::span<const TokenId> targets,
                     std::span<const std::uint8_t> mask, numerics::Matrix<T>& dlogits) {
  const std::size_t count = check(logits, targets, mask);
  dlogits = numerics::Matrix<T>(logits.rows(), logits.cols());
  const T inv = T{1} / static_cast<T>(count);
  double total = 0.0;
  for (std::size_t t = 0; t < logits.rows(); ++t) {
    if (!mask[t]) continue;
    auto row = logits.row(t);
    auto grow = dlogits.row(t);
    const T mx = *std::max_element(row.begin(), row.end());
    T z{0};
    for (std::size_t c = 0; c < row.size(); ++c) {
      grow[c] = std::exp(row[c] - mx);
      z += grow[c];
    }
    const auto target = static_cast<std::size_t>(targets[t]);
    total += static_cast<double>(mx) + std::log(static_cast<double>(z)) -
             static_cast<double>(row[target]);
    for (std::size_t c = 0; c < row.size(); ++c) grow[c] = grow[c] / z * inv;
    grow[target] -= inv;
  }
  return total / static_cast<double>(count);
}

template double nll_loss<float>(const numerics::Matrix<float>&, std::span<const TokenId>,
                                std::span<const std::uint8_t>);
template double nll_loss<double>(const numerics::Matrix<double>&, std::span<const TokenId>,
                                 std::span<const std::uint8_t>);
template double nll_loss_grad<float>(const numerics::Matrix<float>&, std::span<const TokenId>,
                                     std::span<const std::uint8_t>, numerics::Matrix<float>&);
template double nll_loss_grad<double>(const numerics::Matrix<double>&, std::span<const TokenId>,
                                      std::span<const std::uint8_t>, numerics::Matrix<double>&);

}  // namespace crayon::model
