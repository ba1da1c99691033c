#include "crayon/adapters/pool_io.hpp"

#include <string>

#include "crayon/errors.hpp"

namespace crayon::adapters {

namespace {

std::string tensor_name(std::size_t n, const SiteId& s, const char* factor) {
  return "adapter." + std::to_string(n) + "." + model::site_name(s) + "." + factor;
}

SiteId parse_site(const std::string& name) {
  // "layers.{l}.{q|v}"
  const auto dot = name.rfind('.');
  if (name.rfind("layers.", 0) != 0 || dot == std::string::npos || dot <= 7) {
    throw FormatError("bad site name '" + name + "'");
  }
  SiteId s;
  s.layer = std::stoul(name.substr(7, dot - 7));
  const std::string p = name.substr(dot + 1);
  if (p == "q") {
    s.projection = model::Projection::query;
  } else if (p == "v") {
    s.projection = model::Projection::value;
  } else {
    throw FormatError("bad projection in site name '" + name + "'");
  }
  return s;
}

void require_field(bool ok, const std::string& field, const std::string& detail) {
  if (!ok) throw MismatchError("pool field '" + field + "' " + detail);
}

}  // namespace

nlohmann::json pca_to_json(const numerics::PcaProjection& p) {
  return {{"input_dim", p.input_dim()},
          {"out_dim", p.out_dim()},
          {"rank_deficient", p.rank_deficient}};
}

void add_indicator_tensors(model::TensorFileWriter& w, const IndicatorSet& ind) {
  w.add("pca.mean", numerics::row_vector<double>(ind.pca.mean));
  w.add("pca.components", ind.pca.components);
  w.add("pca.explained", numerics::row_vector<double>(ind.pca.explained));
  w.add("centroids", ind.centroids.centroids);
}

IndicatorSet indicators_from_file(const model::TensorFile& f) {
  IndicatorSet ind;
  const numerics::MatrixD mean = f.get_converted<double>("pca.mean");
  const numerics::MatrixD explained = f.get_converted<double>("pca.explained");
  ind.pca.mean.assign(mean.values().begin(), mean.values().end());
  ind.pca.explained.assign(explained.values().begin(), explained.values().end());
  ind.pca.components = f.get_converted<double>("pca.components");
  ind.centroids.centroids = f.get_converted<double>("centroids");
  check_indicators(ind);
  return ind;
}

template <typename T>
std::string serialize_pool(const BaseAdapterPool<T>& pool, const IndicatorSet& ind) {
  check_pool(pool);
  check_indicators(ind);
  if (ind.n_bases() != pool.n_bases()) {
    throw CountError("indicator set has " + std::to_string(ind.n_bases()) +
                     " centroids, pool has " + std::to_string(pool.n_bases()) + " adapters");
  }
  model::TensorFileWriter w;
  w.section("kind") = "adapter_pool";
  nlohmann::json sites = nlohmann::json::array();
  for (const SiteId& s : pool.sites) sites.push_back(model::site_name(s));
  const nlohmann::json pca = pca_to_json(ind.pca);
  w.section("pool") = {{"n_bases", pool.n_bases()},
                       {"rank", pool.rank},
                       {"scaling", pool.scaling},
                       {"d_model", pool.d_model},
                       {"sites", sites},
                       {"pca", pca},
                       {"centroids", {{"n", ind.n_bases()}, {"dim", ind.centroids.dim()}}},
                       {"checksum", model::hex64(pool_checksum(pool, ind))}};
  for (std::size_t n = 0; n < pool.n_bases(); ++n) {
    for (std::size_t s = 0; s < pool.sites.size(); ++s) {
      w.add(tensor_name(n, pool.sites[s], "A"), pool.adapters[n][s].a);
      w.add(tensor_name(n, pool.sites[s], "B"), pool.adapters[n][s].b);
    }
  }
  add_indicator_tensors(w, ind);
  return w.serialize();
}

template <typename T>
void save_pool(const std::filesystem::path& path, const BaseAdapterPool<T>& pool,
               const IndicatorSet& ind) {
  model::write_file_bytes(path, serialize_pool(pool, ind));
}

template <typename T>
PoolBundle<T> pool_from_file(const model::TensorFile& f) {
  const auto& m = f.manifest();
  if (m.value("kind", "") != "adapter_pool") throw FormatError("tensor file is not an adapter pool");
  if (!m.contains("pool")) throw FormatError("adapter pool manifest lacks the 'pool' section");
  const auto& meta = m.at("pool");
  PoolBundle<T> out;
  BaseAdapterPool<T>& pool = out.pool;
  std::size_t n_bases = 0;
  try {
    n_bases = meta.at("n_bases").get<std::size_t>();
    pool.rank = meta.at("rank").get<std::size_t>();
    pool.scaling = meta.at("scaling").get<double>();
    pool.d_model = meta.at("d_model").get<std::size_t>();
    for (const auto& s : meta.at("sites")) pool.sites.push_back(parse_site(s.get<std::string>()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("adapter pool manifest: ") + e.what());
  }

  // Count adapters actually present so a wrong n_bases is reported as such.
  std::size_t stored = 0;
  while (!pool.sites.empty() && f.has(tensor_name(stored, pool.sites[0], "A"))) ++stored;
  require_field(stored == n_bases, "n_bases",
                "declares " + std::to_string(n_bases) + " base adapters, file stores " +
                    std::to_string(stored));

  pool.adapters.resize(n_bases);
  for (std::size_t n = 0; n < n_bases; ++n) {
    for (const SiteId& s : pool.sites) {
      LoraPair<T> p{f.get_converted<T>(tensor_name(n, s, "A")),
                    f.get_converted<T>(tensor_name(n, s, "B"))};
      require_field(p.a.rows() == pool.d_model && p.b.cols() == pool.d_model, "d_model",
                    "is " + std::to_string(pool.d_model) + " but " + tensor_name(n, s, "A") +
                        " is " + numerics::shape_string(p.a));
      require_field(p.a.cols() == pool.rank && p.b.rows() == pool.rank, "rank",
                    "is " + std::to_string(pool.rank) + " but " + tensor_name(n, s, "A") +
                        " is " + numerics::shape_string(p.a));
      pool.adapters[n].push_back(std::move(p));
    }
  }
  out.indicators = indicators_from_file(f);
  out.indicators.pca.rank_deficient = meta.at("pca").value("rank_deficient", false);
  require_field(out.indicators.n_bases() == n_bases, "centroids.n",
                "holds " + std::to_string(out.indicators.n_bases()) + " centroids for " +
                    std::to_string(n_bases) + " base adapters");
  check_pool(pool);

  out.checksum = pool_checksum(pool, out.indicators);
  const std::uint64_t recorded = model::parse_hex64(meta.at("checksum").get<std::string>());
  if (recorded != out.checksum) {
    throw ChecksumMismatchError("pool field 'checksum' records " + model::hex64(recorded) +
                                ", content hashes to " + model::hex64(out.checksum));
  }
  return out;
}

template <typename T>
PoolBundle<T> load_pool(const std::filesystem::path& path) {
  return pool_from_file<T>(model::TensorFile::load(path));
}

#define CRAYON_INSTANTIATE(T)                                                                  \
  template std::string serialize_pool<T>(const BaseAdapterPool<T>&, const IndicatorSet&);      \
  template void save_pool<T>(const std::filesystem::path&, const BaseAdapterPool<T>&,          \
                             const IndicatorSet&);                                             \
  template PoolBundle<T> pool_from_file<T>(const model::TensorFile&);                          \
  template PoolBundle<T> load_pool<T>(const std::filesystem::path&);

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::adapters
