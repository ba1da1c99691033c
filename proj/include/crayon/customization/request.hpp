#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crayon/adapters/pool.hpp"
#include "crayon/model/weights.hpp"
#include "crayon/training/pool_training.hpp"

namespace crayon::customization {

inline constexpr int kProtocolVersion = 1;

// The user's examples. Stays on the device: nothing here is ever serialized.
struct CustomizationSet {
  std::vector<training::Example> examples;

  std::size_t size() const { return examples.size(); }
};

// Mean layer-1 pooled query over BOS prompt SEP of every example. Answers
// do not enter. Throws CountError on an empty set.
template <typename T>
std::vector<double> user_embedding(const model::TransformerWeights<T>& w,
                                   const CustomizationSet& dc);

// Exactly five fields; no text, tokens or embeddings.
struct CustomizationRequest {
  int protocol_version = kProtocolVersion;
  std::uint64_t client_id = 0;
  std::size_t n_bases = 0;
  std::vector<double> alphas;
  bool normalized = true;

  friend bool operator==(const CustomizationRequest&, const CustomizationRequest&) = default;
};

CustomizationRequest make_request(const adapters::IndicatorSet& ind, std::span<const double> q,
                                  std::uint64_t client_id, bool normalize = true);

// u32 little-endian payload length, then the payload.
std::string frame(std::string_view payload);
// Throws FormatError when the prefix disagrees with the byte count.
std::string unframe(std::string_view bytes);

// Framed JSON. Every alpha is the 20-digit zero-padded decimal of its IEEE-754
// bit pattern and client_id is 16 decimal digits, so the length depends on
// n_bases and the normalized flag only.
std::string serialize_request(const CustomizationRequest& req);
// Throws FormatError on schema violations (missing or extra fields,
// malformed numbers, alpha count different from n_bases) and VersionError
// on an unknown protocol_version.
CustomizationRequest parse_request(std::string_view framed);

adapters::BlendWeights request_weights(const CustomizationRequest& req);

}  // namespace crayon::customization
