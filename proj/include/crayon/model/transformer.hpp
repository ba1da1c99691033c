#pragma once

#include <span>
#include <vector>

#include "crayon/model/delta.hpp"
#include "crayon/model/weights.hpp"

namespace crayon::model {

template <typename T>
struct LayerTrace {
  Matrix<T> input;
  Matrix<T> ln1_xhat;
  std::vector<T> ln1_rstd;
  Matrix<T> ln1_out;
  Matrix<T> q, k, v;
  Matrix<T> q_low, v_low;  // ln1_out * A for low-rank sites
  std::vector<Matrix<T>> probs;  // one T x T matrix per head
  Matrix<T> attn;
  Matrix<T> ln2_xhat;
  std::vector<T> ln2_rstd;
  Matrix<T> ln2_out;
  Matrix<T> ff_pre;
  Matrix<T> ff_act;
};

// Activations cached by forward() for backward().
template <typename T>
struct ForwardTrace {
  std::vector<TokenId> tokens;
  std::vector<LayerTrace<T>> layers;
  Matrix<T> lnf_xhat;
  std::vector<T> lnf_rstd;
  Matrix<T> final_norm;
};

// Logits (seq x vocab). Position t depends only on tokens[0..t]. With a
// delta, each adapted projection computes x * (W + delta).
template <typename T>
Matrix<T> forward(const TransformerWeights<T>& w, const DeltaSet<T>* delta,
                  std::span<const TokenId> tokens, ForwardTrace<T>* trace = nullptr);

// Back-propagates dlogits through the traced forward pass. Gradients are
// accumulated (+=) into whichever of delta_grads / weight_grads is non-null.
// delta_grads must have the structure of the delta used in forward().
template <typename T>
void backward(const TransformerWeights<T>& w, const DeltaSet<T>* delta,
              const ForwardTrace<T>& trace, const Matrix<T>& dlogits,
              DeltaSet<T>* delta_grads, TransformerWeights<T>* weight_grads);

// Mean over positions of the layer-1 query vectors (base W_q, all heads
// concatenated). Never sees an adapter.
template <typename T>
std::vector<double> first_layer_queries(const TransformerWeights<T>& w,
                                        std::span<const TokenId> tokens);

void check_tokens(const ModelConfig& config, std::span<const TokenId> tokens);

}  // namespace crayon::model
