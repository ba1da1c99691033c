#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "crayon/model/weights.hpp"
#include "crayon/numerics/matrix.hpp"

namespace crayon::model {

// Container layout (all integers little-endian):
//   bytes 0..7    magic "CRYNTNSR"
//   bytes 8..15   u64 manifest length L
//   next L bytes  UTF-8 JSON manifest
//   remainder     flat blob of IEEE-754 little-endian values in manifest order
// The manifest holds format_version, blob_bytes, blob_checksum, a "tensors"
// array of {name, shape, dtype, byte_offset} and free-form sections.
inline constexpr int kTensorFormatVersion = 1;

enum class DType : std::uint8_t { f32, f64 };

std::string dtype_name(DType t);

struct TensorInfo {
  std::string name;
  std::vector<std::size_t> shape;
  DType dtype = DType::f32;
  std::uint64_t byte_offset = 0;
  std::uint64_t byte_size = 0;
};

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
std::uint64_t parse_hex64(const std::string& s);

class TensorFileWriter {
 public:
  // Free-form metadata stored under manifest[key].
  nlohmann::json& section(const std::string& key) { return sections_[key]; }

  template <typename T>
  void add(const std::string& name, const numerics::Matrix<T>& m);

  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, nlohmann::json> sections_;
  std::vector<TensorInfo> infos_;
  std::string blob_;
};

class TensorFile {
 public:
  // Throws FormatError on any structural problem, VersionError on an
  // unsupported format_version.
  static TensorFile parse(std::string bytes);
  static TensorFile load(const std::filesystem::path& path);

  const nlohmann::json& manifest() const { return manifest_; }
  const std::vector<TensorInfo>& tensors() const { return infos_; }
  std::uint64_t blob_checksum() const { return blob_checksum_; }
  bool has(const std::string& name) const;
  const TensorInfo& info(const std::string& name) const;

  // Exact read; the stored dtype must match T.
  template <typename T>
  numerics::Matrix<T> get(const std::string& name) const;
  // Read with dtype conversion when needed.
  template <typename T>
  numerics::Matrix<T> get_converted(const std::string& name) const;

 private:
  nlohmann::json manifest_;
  std::vector<TensorInfo> infos_;
  std::string blob_;
  std::uint64_t blob_checksum_ = 0;
};

std::string read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::string_view bytes);

template <typename T>
std::string serialize_weights(const TransformerWeights<T>& w);
template <typename T>
void save_weights(const std::filesystem::path& path, const TransformerWeights<T>& w);
// Converts precision if the file was written with the other dtype.
template <typename T>
TransformerWeights<T> weights_from_file(const TensorFile& f);
template <typename T>
TransformerWeights<T> load_weights(const std::filesystem::path& path);

}  // namespace crayon::model
