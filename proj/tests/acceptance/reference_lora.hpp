#pragma once

// Plain single-adapter LoRA trainer written against the model forward and
// backward only. Shares no code with the pool trainer; used to pin the N=1
// pool path.

#include <cmath>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

#include "crayon/model/delta.hpp"
#include "crayon/model/loss.hpp"
#include "crayon/model/sequence.hpp"
#include "crayon/model/transformer.hpp"
#include "crayon/numerics/rng.hpp"

namespace crayon::reference {

template <typename T>
struct LoraSite {
  model::SiteId site;
  numerics::Matrix<T> a;  // d x r
  numerics::Matrix<T> b;  // r x d
};

struct LoraSettings {
  std::size_t rank = 4;
  double scaling = 4.0;
  double lr = 1e-2, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
  std::size_t batch_size = 32;
  std::size_t iters = 100;
  std::uint64_t seed = 1;
};

template <typename T>
struct LoraRun {
  std::vector<LoraSite<T>> sites;
  std::vector<double> loss;
};

template <typename T>
LoraRun<T> train_single_lora(const model::TransformerWeights<T>& w,
                             const std::vector<std::vector<model::TokenId>>& prompts,
                             const std::vector<std::vector<model::TokenId>>& answers,
                             const LoraSettings& s) {
  const std::size_t d = w.config.d_model, r = s.rank;
  LoraRun<T> run;

  numerics::SplitMix64 init(numerics::derive_seed(s.seed, 1));
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t layer = 0; layer < w.config.n_layers; ++layer) {
    for (auto proj : {model::Projection::query, model::Projection::value}) {
      LoraSite<T> ls{{layer, proj}, numerics::Matrix<T>(d, r), numerics::Matrix<T>(r, d)};
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t k = 0; k < r; ++k) ls.a(i, k) = static_cast<T>(init.uniform(-bound, bound));
      }
      run.sites.push_back(std::move(ls));
    }
  }
  const T c = static_cast<T>(s.scaling / static_cast<double>(r));

  std::vector<model::EncodedSequence> data;
  for (std::size_t i = 0; i < prompts.size(); ++i) data.push_back(model::encode_example(prompts[i], answers[i]));

  numerics::SplitMix64 order_rng(numerics::derive_seed(s.seed, 2));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  order_rng.shuffle(std::span<std::size_t>(order));
  std::size_t pos = 0;

  std::vector<std::vector<double>> m(2 * run.sites.size()), v(2 * run.sites.size());
  for (std::size_t i = 0; i < run.sites.size(); ++i) {
    m[2 * i].assign(d * r, 0.0);
    v[2 * i].assign(d * r, 0.0);
    m[2 * i + 1].assign(r * d, 0.0);
    v[2 * i + 1].assign(r * d, 0.0);
  }

  for (std::size_t it = 0; it < s.iters; ++it) {
    std::vector<numerics::Matrix<T>> ga(run.sites.size(), numerics::Matrix<T>(d, r));
    std::vector<numerics::Matrix<T>> gb(run.sites.size(), numerics::Matrix<T>(r, d));
    model::DeltaSet<T> delta;
    for (const auto& ls : run.sites) {
      numerics::Matrix<T> scaled_b(r, d);
      for (std::size_t k = 0; k < r * d; ++k) scaled_b.data()[k] = c * ls.b.data()[k];
      delta.set(ls.site, model::LowRankDelta<T>{ls.a, scaled_b});
    }
    const T inv_batch = static_cast<T>(1.0 / static_cast<double>(s.batch_size));
    double total = 0.0;
    for (std::size_t e = 0; e < s.batch_size; ++e) {
      if (pos == order.size()) {
        order_rng.shuffle(std::span<std::size_t>(order));
        pos = 0;
      }
      const auto& ex = data[order[pos++]];
      model::ForwardTrace<T> trace;
      const auto logits = model::forward(w, &delta, std::span<const model::TokenId>(ex.input), &trace);
      numerics::Matrix<T> dlogits;
      total += model::nll_loss_grad(logits, std::span<const model::TokenId>(ex.targets),
                                    std::span<const std::uint8_t>(ex.mask), dlogits);
      for (auto& x : dlogits.values()) x *= inv_batch;
      model::DeltaSet<T> dd = model::zeros_like(delta);
      model::backward(w, &delta, trace, dlogits, &dd, static_cast<model::TransformerWeights<T>*>(nullptr));
      for (std::size_t i = 0; i < run.sites.size(); ++i) {
        const auto& lr = std::get<model::LowRankDelta<T>>(*dd.site(run.sites[i].site.layer, run.sites[i].site.projection));
        for (std::size_t k = 0; k < d * r; ++k) ga[i].data()[k] += lr.a.data()[k];
        for (std::size_t k = 0; k < r * d; ++k) gb[i].data()[k] += c * lr.b.data()[k];
      }
    }
    run.loss.push_back(total / static_cast<double>(s.batch_size));

    const double progress = static_cast<double>(it) / static_cast<double>(s.iters);
    const double rate = s.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    const double t = static_cast<double>(it + 1);
    const double c1 = 1.0 - std::pow(s.beta1, t), c2 = 1.0 - std::pow(s.beta2, t);
    auto adam = [&](numerics::Matrix<T>& p, const numerics::Matrix<T>& g, std::vector<double>& mm,
                    std::vector<double>& vv) {
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double gk = static_cast<double>(g.data()[k]);
        mm[k] = s.beta1 * mm[k] + (1.0 - s.beta1) * gk;
        vv[k] = s.beta2 * vv[k] + (1.0 - s.beta2) * gk * gk;
        const double pk = static_cast<double>(p.data()[k]);
        p.data()[k] = static_cast<T>(
            pk - rate * ((mm[k] / c1) / (std::sqrt(vv[k] / c2) + s.eps) + s.weight_decay * pk));
      }
    };
    for (std::size_t i = 0; i < run.sites.size(); ++i) {
      adam(run.sites[i].a, ga[i], m[2 * i], v[2 * i]);
      adam(run.sites[i].b, gb[i], m[2 * i + 1], v[2 * i + 1]);
    }
  }
  return run;
}

}  // namespace crayon::reference
