#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include <json.hpp>

namespace crayon::model {

using TokenId = std::int32_t;

enum class Precision : std::uint8_t { f32 = 32, f64 = 64 };

struct ModelConfig {
  std::size_t vocab_size = 32;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_seq = 24;
  Precision precision = Precision::f32;

  std::size_t head_dim() const { return d_model / n_heads; }

  // Throws DimensionError/CountError when the config is unusable.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig config_from_json(const nlohmann::json& j);

std::string precision_name(Precision p);
Precision parse_precision(const std::string& s);

template <typename T>
constexpr Precision precision_of() {
  return sizeof(T) == 4 ? Precision::f32 : Precision::f64;
}

}  // namespace crayon::model
