#pragma once

#include <string>
#include <string_view>

#include "crayon/adapters/pool.hpp"
#include "crayon/hybrid/routing.hpp"
#include "crayon/model/config.hpp"

namespace crayon::customization {

inline constexpr int kPackageVersion = 1;

// What the server ships back: the stacked blended adapter, the prototypes
// and the calibrated threshold.
template <typename T>
struct DeploymentPackage {
  int version = kPackageVersion;
  adapters::CustomizedAdapter<T> adapter;
  std::vector<model::SiteId> sites;
  hybrid::PrototypeSet prototypes;
  hybrid::RoutingConfig routing;
};

// Framed tensor file of kind "deployment_package": tensors
// delta.layers.{l}.{q|v}.{A|B} and prototypes, plus a "package" manifest
// section. Byte-identical for identical packages.
template <typename T>
std::string serialize_package(const DeploymentPackage<T>& pkg);

// Throws FormatError / VersionError / MismatchError; never returns a
// partially read package.
template <typename T>
DeploymentPackage<T> parse_package(std::string_view framed);

// Shape check against the device model. Throws DimensionError or
// VersionError.
template <typename T>
void check_package(const DeploymentPackage<T>& pkg, const model::ModelConfig& config);

}  // namespace crayon::customization
