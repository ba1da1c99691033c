#include "crayon/customization/package.hpp"

#include <variant>

#include "crayon/customization/request.hpp"
#include "crayon/errors.hpp"
#include "crayon/model/tensor_file.hpp"

namespace crayon::customization {

namespace {

std::string factor_name(const model::SiteId& s, const char* factor) {
  return "delta." + model::site_name(s) + "." + factor;
}

model::SiteId site_from_name(const std::string& name) {
  for (const char p : {'q', 'v'}) {
    const std::string suffix = std::string(".") + p;
    if (name.rfind("layers.", 0) == 0 && name.size() > 9 &&
        name.compare(name.size() - 2, 2, suffix) == 0) {
      const std::string layer = name.substr(7, name.size() - 9);
      if (layer.empty() || layer.find_first_not_of("0123456789") != std::string::npos) break;
      return {std::stoul(layer), p == 'q' ? model::Projection::query : model::Projection::value};
    }
  }
  throw FormatError("bad site name '" + name + "' in deployment package");
}

}  // namespace

template <typename T>
std::string serialize_package(const DeploymentPackage<T>& pkg) {
  pkg.routing.validate();
  model::TensorFileWriter w;
  w.section("kind") = "deployment_package";
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& s : pkg.sites) {
    const auto* d = pkg.adapter.delta.site(s.layer, s.projection);
    if (d == nullptr || !std::holds_alternative<model::LowRankDelta<T>>(*d)) {
      throw FormatError("package site " + model::site_name(s) + " lacks a stacked adapter");
    }
    const auto& lr = std::get<model::LowRankDelta<T>>(*d);
    w.add(factor_name(s, "A"), lr.a);
    w.add(factor_name(s, "B"), lr.b);
    sites.push_back(model::site_name(s));
  }
  numerics::MatrixD protos(pkg.prototypes.size(), pkg.prototypes.dim());
  for (std::size_t i = 0; i < pkg.prototypes.size(); ++i) {
    if (pkg.prototypes.signatures[i].size() != protos.cols()) {
      throw DimensionError("prototype signatures differ in length");
    }
    for (std::size_t j = 0; j < protos.cols(); ++j) protos(i, j) = pkg.prototypes.signatures[i][j];
  }
  w.add("prototypes", protos);
  w.add("alphas", numerics::row_vector<double>(pkg.adapter.weights.alphas));
  w.section("package") = {{"version", pkg.version},
                          {"sites", sites},
                          {"effective_rank", pkg.adapter.effective_rank},
                          {"normalized", pkg.adapter.weights.normalized},
                          {"pool_checksum", model::hex64(pkg.adapter.pool_checksum)},
                          {"threshold", pkg.routing.threshold},
                          {"target_ratio", pkg.routing.target_ratio},
                          {"scorer", hybrid::scorer_name(pkg.routing.scorer)}};
  return frame(w.serialize());
}

template <typename T>
DeploymentPackage<T> parse_package(std::string_view framed) {
  const model::TensorFile f = model::TensorFile::parse(unframe(framed));
  const auto& m = f.manifest();
  if (m.value("kind", "") != "deployment_package") {
    throw FormatError("tensor file is not a deployment package");
  }
  if (!m.contains("package")) throw FormatError("deployment package lacks its manifest section");
  const auto& meta = m.at("package");
  DeploymentPackage<T> pkg;
  try {
    pkg.version = meta.at("version").get<int>();
    if (pkg.version != kPackageVersion) {
      throw VersionError("unsupported deployment package version " + std::to_string(pkg.version));
    }
    for (const auto& s : meta.at("sites")) pkg.sites.push_back(site_from_name(s.get<std::string>()));
    pkg.adapter.effective_rank = meta.at("effective_rank").get<std::size_t>();
    pkg.adapter.weights.normalized = meta.at("normalized").get<bool>();
    pkg.adapter.pool_checksum = model::parse_hex64(meta.at("pool_checksum").get<std::string>());
    pkg.routing.threshold = meta.at("threshold").get<double>();
    pkg.routing.target_ratio = meta.at("target_ratio").get<double>();
    pkg.routing.scorer = hybrid::parse_scorer(meta.at("scorer").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("deployment package manifest: ") + e.what());
  }
  pkg.routing.validate();
  for (const auto& s : pkg.sites) {
    model::LowRankDelta<T> lr{f.get_converted<T>(factor_name(s, "A")),
                              f.get_converted<T>(factor_name(s, "B"))};
    if (lr.a.cols() != pkg.adapter.effective_rank || lr.b.rows() != pkg.adapter.effective_rank) {
      throw MismatchError("package field 'effective_rank' is " +
                          std::to_string(pkg.adapter.effective_rank) + " but " +
                          factor_name(s, "A") + " is " + numerics::shape_string(lr.a));
    }
    pkg.adapter.delta.set(s, std::move(lr));
  }
  const numerics::MatrixD alphas = f.get<double>("alphas");
  pkg.adapter.weights.alphas.assign(alphas.values().begin(), alphas.values().end());
  const numerics::MatrixD protos = f.get<double>("prototypes");
  if (protos.rows() == 0) throw CountError("deployment package carries no prototypes");
  for (std::size_t i = 0; i < protos.rows(); ++i) {
    const auto row = protos.row(i);
    pkg.prototypes.signatures.emplace_back(row.begin(), row.end());
  }
  return pkg;
}

template <typename T>
void check_package(const DeploymentPackage<T>& pkg, const model::ModelConfig& config) {
  if (pkg.version != kPackageVersion) {
    throw VersionError("unsupported deployment package version " + std::to_string(pkg.version));
  }
  if (pkg.sites.empty()) throw CountError("deployment package adapts no sites");
  if (pkg.prototypes.size() == 0) throw CountError("deployment package carries no prototypes");
  if (pkg.prototypes.dim() != config.vocab_size) {
    throw DimensionError("prototype dimension " + std::to_string(pkg.prototypes.dim()) +
                         " differs from vocabulary size " + std::to_string(config.vocab_size));
  }
  for (const auto& p : pkg.prototypes.signatures) {
    if (p.size() != config.vocab_size) throw DimensionError("prototype signatures differ in length");
  }
  for (const auto& s : pkg.sites) {
    if (pkg.adapter.delta.site(s.layer, s.projection) == nullptr) {
      throw DimensionError("package lists site " + model::site_name(s) + " without a delta");
    }
  }
  model::check_delta(pkg.adapter.delta, config);
  pkg.routing.validate();
}

#define CRAYON_INSTANTIATE(T)                                                          \
  template std::string serialize_package<T>(const DeploymentPackage<T>&);              \
  template DeploymentPackage<T> parse_package<T>(std::string_view);                    \
  template void check_package<T>(const DeploymentPackage<T>&, const model::ModelConfig&);

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::customization
