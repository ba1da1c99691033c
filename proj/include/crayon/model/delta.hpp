#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "crayon/model/config.hpp"
#include "crayon/numerics/matrix.hpp"

namespace crayon::model {

using numerics::Matrix;

// Projections that carry adapters: W_q and W_v of every layer.
enum class Projection : std::uint8_t { query, value };

std::string projection_name(Projection p);

struct SiteId {
  std::size_t layer = 0;
  Projection projection = Projection::query;
  friend bool operator==(const SiteId&, const SiteId&) = default;
};

// Every adapted site of a model with n_layers layers, layer-major.
std::vector<SiteId> adapted_sites(std::size_t n_layers);

std::string site_name(const SiteId& s);

template <typename T>
struct DenseDelta {
  Matrix<T> delta;  // d x d
};

// delta = a * b with a: d x R and b: R x d.
template <typename T>
struct LowRankDelta {
  Matrix<T> a;
  Matrix<T> b;
};

template <typename T>
using SiteDelta = std::variant<DenseDelta<T>, LowRankDelta<T>>;

template <typename T>
struct LayerDelta {
  std::optional<SiteDelta<T>> query;
  std::optional<SiteDelta<T>> value;
};

// Additive weight deltas for the adapted projections. An empty layer list
// means "no delta anywhere".
template <typename T>
struct DeltaSet {
  std::vector<LayerDelta<T>> layers;

  const SiteDelta<T>* site(std::size_t layer, Projection p) const {
    if (layer >= layers.size()) return nullptr;
    const auto& slot = p == Projection::query ? layers[layer].query : layers[layer].value;
    return slot ? &*slot : nullptr;
  }
  SiteDelta<T>* site(std::size_t layer, Projection p) {
    if (layer >= layers.size()) return nullptr;
    auto& slot = p == Projection::query ? layers[layer].query : layers[layer].value;
    return slot ? &*slot : nullptr;
  }
  void set(const SiteId& id, SiteDelta<T> d) {
    if (layers.size() <= id.layer) layers.resize(id.layer + 1);
    (id.projection == Projection::query ? layers[id.layer].query : layers[id.layer].value) =
        std::move(d);
  }
};

template <typename T>
Matrix<T> materialize(const SiteDelta<T>& d);

template <typename T>
DeltaSet<T> to_dense(const DeltaSet<T>& d);

// Same structure as d with every tensor zeroed (gradient buffer).
template <typename T>
DeltaSet<T> zeros_like(const DeltaSet<T>& d);

template <typename T>
void set_zero(DeltaSet<T>& d);

// Throws DimensionError if a site disagrees with the model shape.
template <typename T>
void check_delta(const DeltaSet<T>& d, const ModelConfig& config);

}  // namespace crayon::model
