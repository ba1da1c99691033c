#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>

#include "crayon/adapters/pool_io.hpp"
#include "crayon/customization/package.hpp"
#include "crayon/customization/request.hpp"
#include "crayon/hybrid/routing.hpp"
#include "crayon/model/handle.hpp"

namespace crayon::customization {

// Prototypes and threshold for one client. Supplied to the server out of
// band: the customization request itself never carries them.
struct PrototypeSource {
  hybrid::PrototypeSet prototypes;
  hybrid::RoutingConfig routing;
};

// Indicator set handed to a client, with the checksum of the pool it
// belongs to.
struct Provisioning {
  adapters::IndicatorSet indicators;
  std::uint64_t pool_checksum = 0;
};

// Server-side blend of a request. Throws CountError when the request's
// n_bases differs from the pool, ChecksumMismatchError when the client was
// provisioned from a different pool.
template <typename T>
adapters::CustomizedAdapter<T> blend_request(const adapters::PoolBundle<T>& pool,
                                            const CustomizationRequest& req,
                                            std::uint64_t client_checksum);

// blend_request plus prototypes and threshold. No optimization happens.
template <typename T>
DeploymentPackage<T> serve_blend(const adapters::PoolBundle<T>& pool,
                                 const CustomizationRequest& req, std::uint64_t client_checksum,
                                 const PrototypeSource& source);

template <typename T>
class BlendServer {
 public:
  explicit BlendServer(adapters::PoolBundle<T> bundle);

  Provisioning provision(std::uint64_t client_id);
  // Records a client provisioned elsewhere, with the checksum it holds.
  void register_client(std::uint64_t client_id, std::uint64_t pool_checksum);
  void set_prototypes(std::uint64_t client_id, PrototypeSource source);

  // Framed request in, framed package out. Unknown clients and clients
  // without prototypes are rejected with MismatchError.
  std::string handle(std::string_view framed_request) const;
  DeploymentPackage<T> serve(const CustomizationRequest& req) const;

  const adapters::PoolBundle<T>& bundle() const { return bundle_; }

 private:
  struct Client {
    std::uint64_t pool_checksum = 0;
    std::optional<PrototypeSource> source;
  };
  adapters::PoolBundle<T> bundle_;
  std::map<std::uint64_t, Client> clients_;
};

// What a device answers with after a package has been applied.
template <typename T>
struct DeployedState {
  model::DeltaSet<T> delta;
  hybrid::PrototypeSet prototypes;
  hybrid::RoutingConfig routing;
  std::vector<double> alphas;
  std::uint64_t pool_checksum = 0;
};

// Device side. Readers take a snapshot and keep it for the whole query;
// apply_package validates fully before swapping the snapshot pointer, so a
// rejected package leaves the previous state in place.
template <typename T>
class DeviceRuntime {
 public:
  DeviceRuntime(std::shared_ptr<const model::TransformerWeights<T>> base, Provisioning provisioning,
                std::uint64_t client_id, bool normalize = true);

  CustomizationRequest make_customization_request(const CustomizationSet& dc) const;
  // Framed request bytes; the only thing derived from dc that leaves the device.
  std::string customization_request(const CustomizationSet& dc) const;

  // Throws on shape, version or pool-checksum mismatch.
  void apply_package(const DeploymentPackage<T>& pkg);
  void apply_package_bytes(std::string_view framed);

  // Null before the first successful apply.
  std::shared_ptr<const DeployedState<T>> snapshot() const;
  model::ModelView<T> view(const DeployedState<T>* state) const;

  model::DecodeResult answer(std::span<const model::TokenId> prompt,
                             std::size_t max_new = model::kDefaultMaxNew) const;
  // Requires an applied package. A null server gives the degraded result.
  hybrid::HybridAnswer hybrid(std::span<const model::TokenId> prompt,
                              const model::ModelView<T>* server,
                              std::size_t max_new = model::kDefaultMaxNew) const;

  const model::TransformerWeights<T>& base() const { return *base_; }
  std::uint64_t client_id() const { return client_id_; }

 private:
  std::shared_ptr<const model::TransformerWeights<T>> base_;
  Provisioning provisioning_;
  std::uint64_t client_id_;
  bool normalize_;
  mutable std::mutex mutex_;
  std::shared_ptr<const DeployedState<T>> state_;
};

}  // namespace crayon::customization
