#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "crayon/model/handle.hpp"

namespace crayon::hybrid {

using model::TokenId;

enum class Source : std::uint8_t { device, server };

// Mean of the per-step output distributions of one greedy answer.
struct OutputSignature {
  std::vector<double> vector;
  Source source = Source::device;
};

struct PrototypeSet {
  std::vector<std::vector<double>> signatures;

  std::size_t size() const { return signatures.size(); }
  std::size_t dim() const { return signatures.empty() ? 0 : signatures.front().size(); }
};

enum class Scorer : std::uint8_t { prototype, max_softmax };

std::string scorer_name(Scorer s);
Scorer parse_scorer(const std::string& s);

struct RoutingConfig {
  double threshold = 0.0;
  double target_ratio = 0.2;
  Scorer scorer = Scorer::prototype;

  void validate() const;  // 0 < target_ratio < 1
};

// Throws EmptyGenerationError when the decode produced no steps.
OutputSignature signature_of(const model::DecodeResult& d, Source source);
double max_softmax_of(const model::DecodeResult& d);

template <typename T>
OutputSignature output_signature(const model::ModelView<T>& m, std::span<const TokenId> query,
                                 std::size_t max_new = model::kDefaultMaxNew,
                                 Source source = Source::device);

// One server signature per prompt, no adapter.
template <typename T>
PrototypeSet build_prototypes(const model::ModelView<T>& server,
                              std::span<const std::vector<TokenId>> prompts,
                              std::size_t max_new = model::kDefaultMaxNew);

// Mean cosine similarity of o against every prototype.
double routing_score(std::span<const double> o, const PrototypeSet& s);

template <typename T>
double max_softmax_score(const model::ModelView<T>& m, std::span<const TokenId> query,
                         std::size_t max_new = model::kDefaultMaxNew);

struct Calibration {
  double threshold = 0.0;
  std::size_t k = 0;          // floor(ratio * M): intended routed count
  std::size_t routed = 0;     // calibration scores strictly below threshold
  bool ties = false;          // another score equals the threshold
};

// threshold = (k+1)-th smallest score with k = floor(ratio * M).
Calibration calibrate_threshold(std::span<const double> scores, double ratio);

enum class Decision : std::uint8_t { held, routed };

struct HybridAnswer {
  std::vector<TokenId> tokens;  // raw generated tokens of the answering model
  Decision decision = Decision::held;
  double score = 0.0;
  bool degraded = false;  // routing wanted but no server: device answer held
};

// Scores one device decode; routes when score < threshold. A null server
// means the server is unreachable.
template <typename T>
HybridAnswer hybrid_answer(const model::ModelView<T>& device, const model::ModelView<T>* server,
                           std::span<const TokenId> query, const PrototypeSet& s,
                           const RoutingConfig& cfg,
                           std::size_t max_new = model::kDefaultMaxNew);

// Score of a finished device decode under the configured scorer.
double score_decode(const model::DecodeResult& d, const PrototypeSet& s, Scorer scorer);

nlohmann::json prototypes_to_json(const PrototypeSet& s);

}  // namespace crayon::hybrid
