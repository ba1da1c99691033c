#include "crayon/model/config.hpp"

#include "crayon/errors.hpp"

namespace crayon::model {

void ModelConfig::validate() const {
  if (vocab_size < 2) throw CountError("model config: vocab_size must be >= 2");
  if (d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_seq == 0) {
    throw CountError("model config: dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw DimensionError("model config: d_model " + std::to_string(d_model) +
                         " not divisible by n_heads " + std::to_string(n_heads));
  }
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"d_ff", c.d_ff},         {"max_seq", c.max_seq},
          {"precision", precision_name(c.precision)}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  try {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.d_ff = j.at("d_ff").get<std::size_t>();
    c.max_seq = j.at("max_seq").get<std::size_t>();
    c.precision = parse_precision(j.at("precision").get<std::string>());
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model config: ") + e.what());
  }
}

std::string precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& s) {
  if (s == "f32" || s == "32") return Precision::f32;
  if (s == "f64" || s == "64") return Precision::f64;
  throw FormatError("unknown precision '" + s + "'");
}

}  // namespace crayon::model
