#include "crayon/model/delta.hpp"

namespace crayon::model {

std::string projection_name(Projection p) { return p == Projection::query ? "q" : "v"; }

std::vector<SiteId> adapted_sites(std::size_t n_layers) {
  std::vector<SiteId> sites;
  for (std::size_t l = 0; l < n_layers; ++l) {
    sites.push_back({l, Projection::query});
    sites.push_back({l, Projection::value});
  }
  return sites;
}

std::string site_name(const SiteId& s) {
  return "layers." + std::to_string(s.layer) + "." + projection_name(s.projection);
}

template <typename T>
Matrix<T> materialize(const SiteDelta<T>& d) {
  if (const auto* dense = std::get_if<DenseDelta<T>>(&d)) return dense->delta;
  const auto& lr = std::get<LowRankDelta<T>>(d);
  return numerics::matmul(lr.a, lr.b);
}

template <typename T>
DeltaSet<T> to_dense(const DeltaSet<T>& d) {
  DeltaSet<T> out;
  out.layers.resize(d.layers.size());
  for (std::size_t l = 0; l < d.layers.size(); ++l) {
    if (d.layers[l].query) out.layers[l].query = DenseDelta<T>{materialize(*d.layers[l].query)};
    if (d.layers[l].value) out.layers[l].value = DenseDelta<T>{materialize(*d.layers[l].value)};
  }
  return out;
}

template <typename T>
void set_zero(DeltaSet<T>& d) {
  for (auto& layer : d.layers) {
    for (auto* slot : {&layer.query, &layer.value}) {
      if (!*slot) continue;
      std::visit(
          [](auto& s) {
            if constexpr (requires { s.delta; }) {
              s.delta.set_zero();
            } else {
              s.a.set_zero();
              s.b.set_zero();
            }
          },
          **slot);
    }
  }
}

template <typename T>
DeltaSet<T> zeros_like(const DeltaSet<T>& d) {
  DeltaSet<T> out = d;
  set_zero(out);
  return out;
}

template <typename T>
void check_delta(const DeltaSet<T>& d, const ModelConfig& config) {
  if (d.layers.size() > config.n_layers) {
    throw DimensionError("delta covers " + std::to_string(d.layers.size()) +
                         " layers, model has " + std::to_string(config.n_layers));
  }
  const std::size_t dm = config.d_model;
  for (std::size_t l = 0; l < d.layers.size(); ++l) {
    for (Projection p : {Projection::query, Projection::value}) {
      const SiteDelta<T>* s = d.site(l, p);
      if (s == nullptr) continue;
      const std::string name = site_name({l, p});
      if (const auto* dense = std::get_if<DenseDelta<T>>(s)) {
        if (dense->delta.rows() != dm || dense->delta.cols() != dm) {
          throw DimensionError("delta " + name + " is " + numerics::shape_string(dense->delta));
        }
      } else {
        const auto& lr = std::get<LowRankDelta<T>>(*s);
        if (lr.a.rows() != dm || lr.b.cols() != dm || lr.a.cols() != lr.b.rows()) {
          throw DimensionError("low-rank delta " + name + " has factors " +
                               numerics::shape_string(lr.a) + " and " +
                               numerics::shape_string(lr.b));
        }
      }
    }
  }
}

#define CRAYON_INSTANTIATE(T)                                               \
  template Matrix<T> materialize<T>(const SiteDelta<T>&);                   \
  template DeltaSet<T> to_dense<T>(const DeltaSet<T>&);                     \
  template DeltaSet<T> zeros_like<T>(const DeltaSet<T>&);                   \
  template void set_zero<T>(DeltaSet<T>&);                                  \
  template void check_delta<T>(const DeltaSet<T>&, const ModelConfig&);

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::model
