#include "crayon/customization/endpoints.hpp"

#include "crayon/errors.hpp"

namespace crayon::customization {

template <typename T>
adapters::CustomizedAdapter<T> blend_request(const adapters::PoolBundle<T>& pool,
                                            const CustomizationRequest& req,
                                            std::uint64_t client_checksum) {
  if (req.protocol_version != kProtocolVersion) {
    throw VersionError("unsupported protocol_version " + std::to_string(req.protocol_version));
  }
  if (req.n_bases != pool.pool.n_bases()) {
    throw CountError("request names " + std::to_string(req.n_bases) + " base adapters, pool has " +
                     std::to_string(pool.pool.n_bases()));
  }
  if (client_checksum != pool.checksum) {
    throw ChecksumMismatchError("client holds indicators of pool " + model::hex64(client_checksum) +
                                ", server pool is " + model::hex64(pool.checksum));
  }
  return adapters::blend_customized(pool.pool, request_weights(req), pool.checksum);
}

template <typename T>
DeploymentPackage<T> serve_blend(const adapters::PoolBundle<T>& pool,
                                 const CustomizationRequest& req, std::uint64_t client_checksum,
                                 const PrototypeSource& source) {
  if (source.prototypes.size() == 0) throw CountError("serve_blend: empty prototype set");
  source.routing.validate();
  DeploymentPackage<T> pkg;
  pkg.adapter = blend_request(pool, req, client_checksum);
  pkg.sites = pool.pool.sites;
  pkg.prototypes = source.prototypes;
  pkg.routing = source.routing;
  return pkg;
}

template <typename T>
BlendServer<T>::BlendServer(adapters::PoolBundle<T> bundle) : bundle_(std::move(bundle)) {
  adapters::check_pool(bundle_.pool);
  adapters::check_indicators(bundle_.indicators);
}

template <typename T>
Provisioning BlendServer<T>::provision(std::uint64_t client_id) {
  register_client(client_id, bundle_.checksum);
  return Provisioning{bundle_.indicators, bundle_.checksum};
}

template <typename T>
void BlendServer<T>::register_client(std::uint64_t client_id, std::uint64_t pool_checksum) {
  clients_[client_id].pool_checksum = pool_checksum;
}

template <typename T>
void BlendServer<T>::set_prototypes(std::uint64_t client_id, PrototypeSource source) {
  const auto it = clients_.find(client_id);
  if (it == clients_.end()) throw MismatchError("client " + std::to_string(client_id) + " is not provisioned");
  it->second.source = std::move(source);
}

template <typename T>
DeploymentPackage<T> BlendServer<T>::serve(const CustomizationRequest& req) const {
  const auto it = clients_.find(req.client_id);
  if (it == clients_.end()) {
    throw MismatchError("client " + std::to_string(req.client_id) + " is not provisioned");
  }
  if (!it->second.source) {
    throw MismatchError("client " + std::to_string(req.client_id) + " has no prototypes");
  }
  return serve_blend(bundle_, req, it->second.pool_checksum, *it->second.source);
}

template <typename T>
std::string BlendServer<T>::handle(std::string_view framed_request) const {
  return serialize_package(serve(parse_request(framed_request)));
}

template <typename T>
DeviceRuntime<T>::DeviceRuntime(std::shared_ptr<const model::TransformerWeights<T>> base,
                                Provisioning provisioning, std::uint64_t client_id,
                                bool normalize)
    : base_(std::move(base)),
      provisioning_(std::move(provisioning)),
      client_id_(client_id),
      normalize_(normalize) {
  if (!base_) throw CountError("device runtime needs base weights");
  adapters::check_indicators(provisioning_.indicators);
  if (provisioning_.indicators.pca.input_dim() != base_->config.d_model) {
    throw DimensionError("indicator input dimension " +
                         std::to_string(provisioning_.indicators.pca.input_dim()) +
                         " differs from device d_model " + std::to_string(base_->config.d_model));
  }
}

template <typename T>
CustomizationRequest DeviceRuntime<T>::make_customization_request(
    const CustomizationSet& dc) const {
  return make_request(provisioning_.indicators, user_embedding(*base_, dc), client_id_, normalize_);
}

template <typename T>
std::string DeviceRuntime<T>::customization_request(const CustomizationSet& dc) const {
  return serialize_request(make_customization_request(dc));
}

template <typename T>
void DeviceRuntime<T>::apply_package(const DeploymentPackage<T>& pkg) {
  check_package(pkg, base_->config);
  if (pkg.adapter.pool_checksum != provisioning_.pool_checksum) {
    throw ChecksumMismatchError("package blended from pool " +
                                model::hex64(pkg.adapter.pool_checksum) + ", device provisioned from " +
                                model::hex64(provisioning_.pool_checksum));
  }
  auto next = std::make_shared<DeployedState<T>>();
  next->delta = pkg.adapter.delta;
  next->prototypes = pkg.prototypes;
  next->routing = pkg.routing;
  next->alphas = pkg.adapter.weights.alphas;
  next->pool_checksum = pkg.adapter.pool_checksum;
  std::lock_guard lock(mutex_);
  state_ = std::move(next);
}

template <typename T>
void DeviceRuntime<T>::apply_package_bytes(std::string_view framed) {
  apply_package(parse_package<T>(framed));
}

template <typename T>
std::shared_ptr<const DeployedState<T>> DeviceRuntime<T>::snapshot() const {
  std::lock_guard lock(mutex_);
  return state_;
}

template <typename T>
model::ModelView<T> DeviceRuntime<T>::view(const DeployedState<T>* state) const {
  return model::ModelView<T>{base_.get(), state ? &state->delta : nullptr};
}

template <typename T>
model::DecodeResult DeviceRuntime<T>::answer(std::span<const model::TokenId> prompt,
                                             std::size_t max_new) const {
  const auto s = snapshot();
  return model::answer_query(view(s.get()), prompt, max_new);
}

template <typename T>
hybrid::HybridAnswer DeviceRuntime<T>::hybrid(std::span<const model::TokenId> prompt,
                                              const model::ModelView<T>* server,
                                              std::size_t max_new) const {
  const auto s = snapshot();
  if (!s) throw MismatchError("hybrid inference needs an applied deployment package");
  return hybrid::hybrid_answer(view(s.get()), server, prompt, s->prototypes, s->routing, max_new);
}

#define CRAYON_INSTANTIATE(T)                                                                 \
  template adapters::CustomizedAdapter<T> blend_request<T>(                                   \
      const adapters::PoolBundle<T>&, const CustomizationRequest&, std::uint64_t);            \
  template DeploymentPackage<T> serve_blend<T>(const adapters::PoolBundle<T>&,                \
                                               const CustomizationRequest&, std::uint64_t,    \
                                               const PrototypeSource&);                       \
  template class BlendServer<T>;                                                              \
  template class DeviceRuntime<T>;

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::customization
