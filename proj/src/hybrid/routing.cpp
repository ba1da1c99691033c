#include "crayon/hybrid/routing.hpp"

#include <algorithm>
#include <cmath>

#include "crayon/errors.hpp"
#include "crayon/numerics/linalg.hpp"

namespace crayon::hybrid {

std::string scorer_name(Scorer s) { return s == Scorer::prototype ? "prototype" : "max-softmax"; }

Scorer parse_scorer(const std::string& s) {
  if (s == "prototype") return Scorer::prototype;
  if (s == "max-softmax" || s == "max_softmax") return Scorer::max_softmax;
  throw RangeError("unknown scorer '" + s + "'");
}

void RoutingConfig::validate() const {
  if (!(target_ratio > 0.0 && target_ratio < 1.0)) {
    throw RangeError("routing ratio must lie strictly between 0 and 1");
  }
}

OutputSignature signature_of(const model::DecodeResult& d, Source source) {
  const auto& p = d.distributions;
  if (p.rows() == 0) throw EmptyGenerationError("output signature of an empty generation");
  OutputSignature s;
  s.source = source;
  s.vector.assign(p.cols(), 0.0);
  for (std::size_t t = 0; t < p.rows(); ++t) {
    for (std::size_t v = 0; v < p.cols(); ++v) s.vector[v] += p(t, v);
  }
  for (double& v : s.vector) v /= static_cast<double>(p.rows());
  return s;
}

double max_softmax_of(const model::DecodeResult& d) {
  const auto& p = d.distributions;
  if (p.rows() == 0) throw EmptyGenerationError("max-softmax score of an empty generation");
  double total = 0.0;
  for (std::size_t t = 0; t < p.rows(); ++t) {
    const auto row = p.row(t);
    total += *std::max_element(row.begin(), row.end());
  }
  return total / static_cast<double>(p.rows());
}

template <typename T>
OutputSignature output_signature(const model::ModelView<T>& m, std::span<const TokenId> query,
                                 std::size_t max_new, Source source) {
  return signature_of(model::answer_query(m, query, max_new), source);
}

template <typename T>
PrototypeSet build_prototypes(const model::ModelView<T>& server,
                              std::span<const std::vector<TokenId>> prompts,
                              std::size_t max_new) {
  if (prompts.empty()) throw CountError("build_prototypes: empty customization set");
  PrototypeSet s;
  for (const auto& p : prompts) {
    s.signatures.push_back(
        output_signature(server, std::span<const TokenId>(p), max_new, Source::server).vector);
  }
  return s;
}

double routing_score(std::span<const double> o, const PrototypeSet& s) {
  if (s.size() == 0) throw CountError("routing_score: empty prototype set");
  double total = 0.0;
  for (const auto& proto : s.signatures) {
    if (proto.size() != o.size()) {
      throw DimensionError("routing_score: signature has " + std::to_string(o.size()) +
                           " entries, prototype has " + std::to_string(proto.size()));
    }
    total += numerics::cosine_similarity(o, proto);
  }
  return total / static_cast<double>(s.size());
}

template <typename T>
double max_softmax_score(const model::ModelView<T>& m, std::span<const TokenId> query,
                         std::size_t max_new) {
  return max_softmax_of(model::answer_query(m, query, max_new));
}

Calibration calibrate_threshold(std::span<const double> scores, double ratio) {
  if (scores.empty()) throw CountError("calibrate_threshold: no scores");
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw RangeError("calibrate_threshold: ratio must lie strictly between 0 and 1");
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  for (double v : sorted) {
    if (!std::isfinite(v)) throw NonFiniteError("calibrate_threshold: non-finite score");
  }
  std::sort(sorted.begin(), sorted.end());
  Calibration c;
  c.k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(sorted.size())));
  c.k = std::min(c.k, sorted.size() - 1);
  c.threshold = sorted[c.k];
  c.routed = static_cast<std::size_t>(
      std::lower_bound(sorted.begin(), sorted.end(), c.threshold) - sorted.begin());
  c.ties = std::count(sorted.begin(), sorted.end(), c.threshold) > 1;
  return c;
}

double score_decode(const model::DecodeResult& d, const PrototypeSet& s, Scorer scorer) {
  if (scorer == Scorer::max_softmax) return max_softmax_of(d);
  return routing_score(signature_of(d, Source::device).vector, s);
}

template <typename T>
HybridAnswer hybrid_answer(const model::ModelView<T>& device, const model::ModelView<T>* server,
                           std::span<const TokenId> query, const PrototypeSet& s,
                           const RoutingConfig& cfg, std::size_t max_new) {
  const model::DecodeResult local = model::answer_query(device, query, max_new);
  HybridAnswer out;
  out.score = score_decode(local, s, cfg.scorer);
  out.tokens = local.tokens;
  if (out.score < cfg.threshold) {
    if (server == nullptr) {
      out.degraded = true;
    } else {
      out.tokens = model::answer_query(*server, query, max_new).tokens;
      out.decision = Decision::routed;
    }
  }
  return out;
}

nlohmann::json prototypes_to_json(const PrototypeSet& s) { return s.signatures; }

#define CRAYON_INSTANTIATE(T)                                                                   \
  template OutputSignature output_signature<T>(const model::ModelView<T>&,                      \
                                               std::span<const TokenId>, std::size_t, Source);  \
  template PrototypeSet build_prototypes<T>(const model::ModelView<T>&,                         \
                                            std::span<const std::vector<TokenId>>, std::size_t); \
  template double max_softmax_score<T>(const model::ModelView<T>&, std::span<const TokenId>,    \
                                       std::size_t);                                            \
  template HybridAnswer hybrid_answer<T>(const model::ModelView<T>&, const model::ModelView<T>*, \
                                         std::span<const TokenId>, const PrototypeSet&,          \
                                         const RoutingConfig&, std::size_t);

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::hybrid
