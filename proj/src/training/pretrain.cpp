#include "crayon/training/pretrain.hpp"

#include <cmath>
#include <string>

#include "crayon/errors.hpp"
#include "crayon/model/loss.hpp"
#include "crayon/model/sequence.hpp"
#include "crayon/model/transformer.hpp"

namespace crayon::training {

template <typename T>
PretrainResult<T> pretrain(const model::ModelConfig& config, std::span<const Example> corpus,
                           const PretrainConfig& cfg) {
  if (corpus.empty()) throw CountError("pretrain: empty corpus");
  if (cfg.batch_size < 1) throw CountError("pretrain: batch_size must be >= 1");
  PretrainResult<T> out;
  out.weights = model::init_weights<T>(config, numerics::derive_seed(cfg.seed, 0));

  std::vector<model::EncodedSequence> seqs;
  seqs.reserve(corpus.size());
  for (const Example& e : corpus) seqs.push_back(model::encode_example(e.prompt, e.answer));

  AdamW<T> opt(cfg.optimizer);
  BatchSampler sampler(seqs.size(), numerics::derive_seed(cfg.seed, 2));
  const auto params = parameters(out.weights);
  const T inv_batch = static_cast<T>(1.0 / static_cast<double>(cfg.batch_size));
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    model::TransformerWeights<T> grads = model::zeros_like(out.weights);
    double total = 0.0;
    for (std::size_t idx : sampler.next(cfg.batch_size)) {
      const model::EncodedSequence& s = seqs[idx];
      model::ForwardTrace<T> trace;
      const auto logits = model::forward<T>(out.weights, nullptr, s.input, &trace);
      numerics::Matrix<T> dlogits;
      total += model::nll_loss_grad(logits, std::span<const model::TokenId>(s.targets),
                                    std::span<const std::uint8_t>(s.mask), dlogits);
      numerics::scale_inplace(dlogits, inv_batch);
      model::backward<T>(out.weights, nullptr, trace, dlogits, nullptr, &grads);
    }
    const double loss = total / static_cast<double>(cfg.batch_size);
    if (!std::isfinite(loss)) {
      throw NonFiniteError("pretrain: loss became " + std::to_string(loss) + " at iteration " +
                           std::to_string(it));
    }
    opt.step(params, parameters(std::as_const(grads)),
             cosine_lr(cfg.optimizer.lr, it, cfg.max_iters));
    out.loss.push_back(loss);
  }
  return out;
}

template PretrainResult<float> pretrain<float>(const model::ModelConfig&, std::span<const Example>,
                                               const PretrainConfig&);
template PretrainResult<double> pretrain<double>(const model::ModelConfig&,
                                                 std::span<const Example>, const PretrainConfig&);

}  // namespace crayon::training
