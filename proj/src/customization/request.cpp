#include "crayon/customization/request.hpp"

#include <bit>
#include <charconv>
#include <cstdio>

#include <json.hpp>

#include "crayon/errors.hpp"
#include "crayon/model/sequence.hpp"
#include "crayon/model/transformer.hpp"

namespace crayon::customization {

namespace {

constexpr std::uint64_t kClientIdLimit = 10'000'000'000'000'000ULL;  // 16 digits

std::string fixed_digits(std::uint64_t v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*llu", width, static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_digits(const std::string& s, std::size_t width, const char* field) {
  if (s.size() != width) {
    throw FormatError(std::string("request field '") + field + "' must have " +
                      std::to_string(width) + " digits");
  }
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) {
    throw FormatError(std::string("request field '") + field + "' is not a decimal number");
  }
  return v;
}

}  // namespace

template <typename T>
std::vector<double> user_embedding(const model::TransformerWeights<T>& w,
                                   const CustomizationSet& dc) {
  if (dc.examples.empty()) throw CountError("user_embedding: empty customization set");
  std::vector<double> mean(w.config.d_model, 0.0);
  for (const auto& ex : dc.examples) {
    const auto q = model::first_layer_queries(w, model::answer_context(ex.prompt));
    for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += q[j];
  }
  for (double& v : mean) v /= static_cast<double>(dc.examples.size());
  return mean;
}

CustomizationRequest make_request(const adapters::IndicatorSet& ind, std::span<const double> q,
                                  std::uint64_t client_id, bool normalize) {
  if (client_id >= kClientIdLimit) throw RangeError("client_id must fit in 16 decimal digits");
  const adapters::BlendWeights w = adapters::alpha_from_embedding(ind, q, normalize);
  CustomizationRequest req;
  req.client_id = client_id;
  req.n_bases = w.alphas.size();
  req.alphas = w.alphas;
  req.normalized = w.normalized;
  return req;
}

std::string frame(std::string_view payload) {
  if (payload.size() > 0xFFFFFFFFULL) throw RangeError("payload too large to frame");
  const auto n = static_cast<std::uint32_t>(payload.size());
  std::string out(4, '\0');
  for (int i = 0; i < 4; ++i) out[i] = static_cast<char>((n >> (8 * i)) & 0xFF);
  out.append(payload);
  return out;
}

std::string unframe(std::string_view bytes) {
  if (bytes.size() < 4) throw FormatError("framed message shorter than its length prefix");
  std::uint32_t n = 0;
  for (int i = 0; i < 4; ++i) n |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i])) << (8 * i);
  if (bytes.size() - 4 != n) {
    throw FormatError("frame declares " + std::to_string(n) + " payload bytes, found " +
                      std::to_string(bytes.size() - 4));
  }
  return std::string(bytes.substr(4));
}

std::string serialize_request(const CustomizationRequest& req) {
  if (req.alphas.size() != req.n_bases) {
    throw CountError("request carries " + std::to_string(req.alphas.size()) + " alphas for " +
                     std::to_string(req.n_bases) + " base adapters");
  }
  if (req.client_id >= kClientIdLimit) throw RangeError("client_id must fit in 16 decimal digits");
  nlohmann::json alphas = nlohmann::json::array();
  for (double a : req.alphas) alphas.push_back(fixed_digits(std::bit_cast<std::uint64_t>(a), 20));
  const nlohmann::json j = {{"protocol_version", req.protocol_version},
                            {"client_id", fixed_digits(req.client_id, 16)},
                            {"n_bases", req.n_bases},
                            {"alphas", alphas},
                            {"normalized", req.normalized}};
  return frame(j.dump());
}

CustomizationRequest parse_request(std::string_view framed) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(unframe(framed));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("request is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || j.size() != 5) throw FormatError("request must hold exactly five fields");
  CustomizationRequest req;
  try {
    req.protocol_version = j.at("protocol_version").get<int>();
    if (req.protocol_version != kProtocolVersion) {
      throw VersionError("unsupported protocol_version " + std::to_string(req.protocol_version));
    }
    req.client_id = parse_digits(j.at("client_id").get<std::string>(), 16, "client_id");
    req.n_bases = j.at("n_bases").get<std::size_t>();
    req.normalized = j.at("normalized").get<bool>();
    for (const auto& a : j.at("alphas")) {
      req.alphas.push_back(
          std::bit_cast<double>(parse_digits(a.get<std::string>(), 20, "alphas")));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("request schema: ") + e.what());
  }
  if (req.alphas.size() != req.n_bases) {
    throw FormatError("request field 'alphas' holds " + std::to_string(req.alphas.size()) +
                      " values, n_bases is " + std::to_string(req.n_bases));
  }
  return req;
}

adapters::BlendWeights request_weights(const CustomizationRequest& req) {
  return adapters::BlendWeights{req.alphas, req.normalized};
}

template std::vector<double> user_embedding<float>(const model::TransformerWeights<float>&,
                                                   const CustomizationSet&);
template std::vector<double> user_embedding<double>(const model::TransformerWeights<double>&,
                                                    const CustomizationSet&);

}  // namespace crayon::customization
