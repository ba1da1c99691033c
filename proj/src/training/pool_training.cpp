#include "crayon/training/pool_training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "crayon/adapters/lora_backward.hpp"
#include "crayon/errors.hpp"
#include "crayon/model/sequence.hpp"
#include "crayon/model/transformer.hpp"
#include "crayon/numerics/rng.hpp"

namespace crayon::training {

using numerics::MatrixD;

std::string TrainLog::to_jsonl() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < loss.size(); ++i) {
    nlohmann::json j = {{"iter", i}, {"loss", loss[i]}};
    if (i < lr.size()) j["lr"] = lr[i];
    out << j.dump() << '\n';
  }
  for (const AlphaRecord& r : alphas) {
    nlohmann::json j = {{"example", r.example}, {"alphas", r.alphas}};
    if (!r.task.empty()) j["task"] = r.task;
    out << j.dump() << '\n';
  }
  out << nlohmann::json{{"wall_seconds", wall_seconds}}.dump() << '\n';
  return out.str();
}

void attach_tasks(TrainLog& log, std::span<const std::string> tasks) {
  for (AlphaRecord& r : log.alphas) {
    if (r.example >= tasks.size()) throw RangeError("alpha record refers past the task list");
    r.task = tasks[r.example];
  }
}

template <typename T>
MatrixD extract_embeddings(const model::TransformerWeights<T>& w, std::span<const Example> corpus,
                           std::size_t cap, std::uint64_t seed) {
  if (corpus.empty()) throw CountError("extract_embeddings: empty corpus");
  if (cap < 1) throw CountError("extract_embeddings: cap must be >= 1");
  std::vector<std::size_t> chosen(corpus.size());
  std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  if (cap < corpus.size()) {
    numerics::SplitMix64 rng(seed);
    // Partial Fisher-Yates: the first cap slots become a uniform subset.
    for (std::size_t i = 0; i < cap; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(corpus.size() - i));
      std::swap(chosen[i], chosen[j]);
    }
    chosen.resize(cap);
    std::sort(chosen.begin(), chosen.end());
  }
  MatrixD out(chosen.size(), w.config.d_model);
  for (std::size_t r = 0; r < chosen.size(); ++r) {
    const auto ctx = model::answer_context(corpus[chosen[r]].prompt);
    const auto q = model::first_layer_queries(w, std::span<const TokenId>(ctx));
    std::copy(q.begin(), q.end(), out.row(r).begin());
  }
  return out;
}

adapters::IndicatorSet build_indicators(const MatrixD& embeddings, const TrainConfig& cfg) {
  cfg.validate();
  if (embeddings.rows() < cfg.n_bases) {
    throw CountError("build_indicators: " + std::to_string(embeddings.rows()) +
                     " embeddings for " + std::to_string(cfg.n_bases) + " base adapters");
  }
  adapters::IndicatorSet ind;
  ind.pca = cfg.use_pca ? numerics::fit_pca(embeddings, cfg.pca_dim)
                        : numerics::identity_projection(embeddings.cols());
  MatrixD projected(embeddings.rows(), ind.pca.out_dim());
  for (std::size_t r = 0; r < embeddings.rows(); ++r) {
    const auto z = numerics::pca_project(ind.pca, embeddings.row(r));
    std::copy(z.begin(), z.end(), projected.row(r).begin());
  }
  ind.centroids = numerics::kmeans(projected, cfg.n_bases, numerics::derive_seed(cfg.seed, 3));
  return ind;
}

template <typename T>
adapters::BlendWeights example_weights(const model::TransformerWeights<T>& w,
                                       const adapters::IndicatorSet& ind,
                                       std::span<const TokenId> prompt, const TrainConfig& cfg) {
  if (cfg.constant_alpha) return adapters::constant_weights(cfg.n_bases);
  const auto ctx = model::answer_context(prompt);
  const auto q = model::first_layer_queries(w, std::span<const TokenId>(ctx));
  return adapters::alpha_from_embedding(ind, q, cfg.normalize_alpha);
}

BatchSampler::BatchSampler(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n) {
  if (n == 0) throw CountError("BatchSampler: empty index range");
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  rng_.shuffle(std::span<std::size_t>(order_));
}

std::vector<std::size_t> BatchSampler::next(std::size_t batch_size) {
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  while (out.size() < batch_size) {
    if (pos_ == order_.size()) {
      rng_.shuffle(std::span<std::size_t>(order_));
      pos_ = 0;
    }
    out.push_back(order_[pos_++]);
  }
  return out;
}

template <typename T>
PoolTrainResult<T> train_pool(const model::TransformerWeights<T>& w,
                              std::span<const Example> corpus, const adapters::IndicatorSet& ind,
                              const TrainConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  if (corpus.empty()) throw CountError("train_pool: empty corpus");
  if (!cfg.constant_alpha && ind.n_bases() != cfg.n_bases) {
    throw CountError("train_pool: indicator set has " + std::to_string(ind.n_bases()) +
                     " centroids, config asks for " + std::to_string(cfg.n_bases) +
                     " base adapters");
  }

  PoolTrainResult<T> out;
  out.pool = adapters::init_pool<T>(w.config, cfg.n_bases, cfg.rank, cfg.scaling,
                                    numerics::derive_seed(cfg.seed, 1));

  // Alphas depend only on the frozen base and the fixed indicators.
  std::vector<adapters::LoraExample> items(corpus.size());
  out.log.alphas.resize(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const model::EncodedSequence enc = model::encode_example(corpus[i].prompt, corpus[i].answer);
    items[i].input = enc.input;
    items[i].targets = enc.targets;
    items[i].mask = enc.mask;
    items[i].weights = example_weights(w, ind, corpus[i].prompt, cfg);
    out.log.alphas[i] = AlphaRecord{i, "", items[i].weights.alphas};
  }

  AdamW<T> opt(cfg.optimizer);
  BatchSampler sampler(corpus.size(), numerics::derive_seed(cfg.seed, 2));
  const auto params = parameters(out.pool);
  std::vector<adapters::LoraExample> batch;
  for (std::size_t it = 0; it < cfg.max_iters; ++it) {
    batch.clear();
    for (std::size_t idx : sampler.next(cfg.batch_size)) batch.push_back(items[idx]);
    adapters::BaseAdapterPool<T> grads = adapters::zeros_like(out.pool);
    const double loss = adapters::lora_backward(w, out.pool, std::span<const adapters::LoraExample>(batch), grads);
    if (!std::isfinite(loss)) {
      throw NonFiniteError("train_pool: loss became " + std::to_string(loss) + " at iteration " +
                           std::to_string(it));
    }
    const double lr = cosine_lr(cfg.optimizer.lr, it, cfg.max_iters);
    opt.step(params, parameters(std::as_const(grads)), lr);
    out.log.loss.push_back(loss);
    out.log.lr.push_back(lr);
  }
  out.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

std::size_t AlphaDiversityReport::pairs_with_gap(double gap) const {
  std::size_t count = 0;
  for (const auto& [name, stats] : tasks) {
    for (std::size_t n = 0; n < stats.mean.size(); ++n) {
      for (const auto& [other, ostats] : tasks) {
        if (other != name && std::abs(stats.mean[n] - ostats.mean[n]) >= gap) {
          ++count;
          break;
        }
      }
    }
  }
  return count;
}

nlohmann::json AlphaDiversityReport::to_json() const {
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [name, s] : tasks) {
    t[name] = {{"count", s.count}, {"mean", s.mean}, {"std", s.std}};
  }
  return {{"tasks", t},
          {"max_mean_gap", max_mean_gap},
          {"overall_std", overall_std},
          {"mean_overall_std", mean_overall_std}};
}

namespace {

void mean_std(const std::vector<const AlphaRecord*>& rs, std::size_t n_bases,
              std::vector<double>& mean, std::vector<double>& sd) {
  mean.assign(n_bases, 0.0);
  sd.assign(n_bases, 0.0);
  for (const AlphaRecord* r : rs) {
    for (std::size_t n = 0; n < n_bases; ++n) mean[n] += r->alphas[n];
  }
  const double count = static_cast<double>(rs.size());
  for (double& m : mean) m /= count;
  for (const AlphaRecord* r : rs) {
    for (std::size_t n = 0; n < n_bases; ++n) {
      const double d = r->alphas[n] - mean[n];
      sd[n] += d * d;
    }
  }
  for (double& s : sd) s = std::sqrt(s / count);
}

}  // namespace

AlphaDiversityReport alpha_diversity_report(std::span<const AlphaRecord> records) {
  if (records.empty()) throw CountError("alpha_diversity_report: empty log");
  const std::size_t n_bases = records.front().alphas.size();
  std::map<std::string, std::vector<const AlphaRecord*>> by_task;
  std::vector<const AlphaRecord*> all;
  for (const AlphaRecord& r : records) {
    if (r.task.empty()) throw CountError("alpha_diversity_report: record without a task tag");
    if (r.alphas.size() != n_bases) throw CountError("alpha_diversity_report: ragged alphas");
    by_task[r.task].push_back(&r);
    all.push_back(&r);
  }
  AlphaDiversityReport rep;
  for (const auto& [name, rs] : by_task) {
    TaskAlphaStats& s = rep.tasks[name];
    s.count = rs.size();
    mean_std(rs, n_bases, s.mean, s.std);
  }
  rep.max_mean_gap.assign(n_bases, 0.0);
  for (const auto& [a, sa] : rep.tasks) {
    for (const auto& [b, sb] : rep.tasks) {
      for (std::size_t n = 0; n < n_bases; ++n) {
        rep.max_mean_gap[n] = std::max(rep.max_mean_gap[n], std::abs(sa.mean[n] - sb.mean[n]));
      }
    }
  }
  std::vector<double> mean;
  mean_std(all, n_bases, mean, rep.overall_std);
  rep.mean_overall_std = std::accumulate(rep.overall_std.begin(), rep.overall_std.end(), 0.0) /
                         static_cast<double>(n_bases);
  return rep;
}

#define CRAYON_INSTANTIATE(T)                                                                   \
  template MatrixD extract_embeddings<T>(const model::TransformerWeights<T>&,                   \
                                         std::span<const Example>, std::size_t, std::uint64_t); \
  template adapters::BlendWeights example_weights<T>(                                           \
      const model::TransformerWeights<T>&, const adapters::IndicatorSet&,                       \
      std::span<const TokenId>, const TrainConfig&);                                            \
  template PoolTrainResult<T> train_pool<T>(const model::TransformerWeights<T>&,                \
                                            std::span<const Example>,                           \
                                            const adapters::IndicatorSet&, const TrainConfig&);

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::training
