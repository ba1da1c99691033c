#include "crayon/model/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "crayon/errors.hpp"

namespace crayon::model {

namespace {

constexpr std::string_view kMagic = "CRYNTNSR";

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  }
  return v;
}

template <typename T>
void append_values(std::string& blob, const numerics::Matrix<T>& m) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T v : m.values()) {
    const Bits b = std::bit_cast<Bits>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      blob.push_back(static_cast<char>((b >> (8 * i)) & 0xFF));
    }
  }
}

template <typename T>
numerics::Matrix<T> read_values(std::string_view bytes, std::size_t rows, std::size_t cols) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  numerics::Matrix<T> m(rows, cols);
  for (std::size_t k = 0; k < m.size(); ++k) {
    Bits b = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      b |= static_cast<Bits>(static_cast<unsigned char>(bytes[k * sizeof(T) + i])) << (8 * i);
    }
    m.data()[k] = std::bit_cast<T>(b);
  }
  return m;
}

std::size_t dtype_size(DType t) { return t == DType::f32 ? 4 : 8; }

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw FormatError("tensor file: unknown dtype '" + s + "'");
}

}  // namespace

std::string dtype_name(DType t) { return t == DType::f32 ? "f32" : "f64"; }

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::uint64_t parse_hex64(const std::string& s) {
  if (s.size() != 16 || s.find_first_not_of("0123456789abcdef") != std::string::npos) {
    throw FormatError("expected 16 lowercase hex digits, got '" + s + "'");
  }
  return std::stoull(s, nullptr, 16);
}

template <typename T>
void TensorFileWriter::add(const std::string& name, const numerics::Matrix<T>& m) {
  for (const auto& i : infos_) {
    if (i.name == name) throw FormatError("tensor file: duplicate tensor '" + name + "'");
  }
  TensorInfo info;
  info.name = name;
  info.shape = {m.rows(), m.cols()};
  info.dtype = sizeof(T) == 4 ? DType::f32 : DType::f64;
  info.byte_offset = blob_.size();
  info.byte_size = m.size() * sizeof(T);
  append_values(blob_, m);
  infos_.push_back(std::move(info));
}

std::string TensorFileWriter::serialize() const {
  nlohmann::json manifest = nlohmann::json::object();
  for (const auto& [k, v] : sections_) manifest[k] = v;
  manifest["format_version"] = kTensorFormatVersion;
  manifest["blob_bytes"] = blob_.size();
  manifest["blob_checksum"] = hex64(fnv1a(blob_));
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& i : infos_) {
    tensors.push_back({{"name", i.name},
                       {"shape", i.shape},
                       {"dtype", dtype_name(i.dtype)},
                       {"byte_offset", i.byte_offset}});
  }
  manifest["tensors"] = std::move(tensors);
  const std::string text = manifest.dump();
  std::string out(kMagic);
  put_u64(out, text.size());
  out += text;
  out += blob_;
  return out;
}

void TensorFileWriter::save(const std::filesystem::path& path) const {
  write_file_bytes(path, serialize());
}

TensorFile TensorFile::parse(std::string bytes) {
  if (bytes.size() < 16 || std::string_view(bytes).substr(0, 8) != kMagic) {
    throw FormatError("tensor file: missing magic header");
  }
  const std::uint64_t mlen = get_u64(std::string_view(bytes).substr(8, 8));
  if (mlen > bytes.size() - 16) throw FormatError("tensor file: truncated manifest");

  TensorFile f;
  try {
    f.manifest_ = nlohmann::json::parse(bytes.substr(16, mlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("tensor file: corrupt manifest: ") + e.what());
  }
  try {
    const int version = f.manifest_.at("format_version").get<int>();
    if (version != kTensorFormatVersion) {
      throw VersionError("tensor file: format_version " + std::to_string(version) +
                         " unsupported (expected " + std::to_string(kTensorFormatVersion) + ")");
    }
    const auto blob_bytes = f.manifest_.at("blob_bytes").get<std::uint64_t>();
    const std::size_t blob_start = 16 + mlen;
    if (bytes.size() - blob_start != blob_bytes) {
      throw FormatError("tensor file: blob has " + std::to_string(bytes.size() - blob_start) +
                        " bytes, manifest declares " + std::to_string(blob_bytes));
    }
    f.blob_ = bytes.substr(blob_start);
    f.blob_checksum_ = fnv1a(f.blob_);
    if (hex64(f.blob_checksum_) != f.manifest_.at("blob_checksum").get<std::string>()) {
      throw FormatError("tensor file: blob checksum mismatch");
    }
    for (const auto& t : f.manifest_.at("tensors")) {
      TensorInfo info;
      info.name = t.at("name").get<std::string>();
      info.shape = t.at("shape").get<std::vector<std::size_t>>();
      info.dtype = parse_dtype(t.at("dtype").get<std::string>());
      info.byte_offset = t.at("byte_offset").get<std::uint64_t>();
      if (info.shape.size() != 2) {
        throw FormatError("tensor file: tensor '" + info.name + "' must be rank 2");
      }
      info.byte_size = info.shape[0] * info.shape[1] * dtype_size(info.dtype);
      if (info.byte_offset + info.byte_size > f.blob_.size()) {
        throw FormatError("tensor file: tensor '" + info.name + "' extends past blob end");
      }
      f.infos_.push_back(std::move(info));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("tensor file: corrupt manifest: ") + e.what());
  }
  return f;
}

TensorFile TensorFile::load(const std::filesystem::path& path) {
  return parse(read_file_bytes(path));
}

bool TensorFile::has(const std::string& name) const {
  for (const auto& i : infos_) {
    if (i.name == name) return true;
  }
  return false;
}

const TensorInfo& TensorFile::info(const std::string& name) const {
  for (const auto& i : infos_) {
    if (i.name == name) return i;
  }
  throw FormatError("tensor file: missing tensor '" + name + "'");
}

template <typename T>
numerics::Matrix<T> TensorFile::get(const std::string& name) const {
  const TensorInfo& i = info(name);
  const DType want = sizeof(T) == 4 ? DType::f32 : DType::f64;
  if (i.dtype != want) {
    throw MismatchError("tensor '" + name + "': dtype is " + dtype_name(i.dtype) + ", expected " +
                        dtype_name(want));
  }
  return read_values<T>(std::string_view(blob_).substr(i.byte_offset, i.byte_size), i.shape[0],
                        i.shape[1]);
}

template <typename T>
numerics::Matrix<T> TensorFile::get_converted(const std::string& name) const {
  const TensorInfo& i = info(name);
  const auto bytes = std::string_view(blob_).substr(i.byte_offset, i.byte_size);
  if (i.dtype == DType::f32) return numerics::cast<T>(read_values<float>(bytes, i.shape[0], i.shape[1]));
  return numerics::cast<T>(read_values<double>(bytes, i.shape[0], i.shape[1]));
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

template <typename T>
std::string serialize_weights(const TransformerWeights<T>& w) {
  check_shapes(w);
  TensorFileWriter writer;
  writer.section("kind") = "transformer_weights";
  writer.section("config") = to_json(w.config);
  w.visit([&](const std::string& name, const numerics::Matrix<T>& m) { writer.add(name, m); });
  return writer.serialize();
}

template <typename T>
void save_weights(const std::filesystem::path& path, const TransformerWeights<T>& w) {
  write_file_bytes(path, serialize_weights(w));
}

template <typename T>
TransformerWeights<T> weights_from_file(const TensorFile& f) {
  if (f.manifest().value("kind", "") != "transformer_weights") {
    throw FormatError("tensor file does not hold transformer weights");
  }
  const ModelConfig config = config_from_json(f.manifest().at("config"));
  TransformerWeights<T> w = zero_weights<T>(config);
  w.visit([&](const std::string& name, numerics::Matrix<T>& m) {
    numerics::Matrix<T> loaded = f.get_converted<T>(name);
    if (!loaded.same_shape(m)) {
      throw MismatchError("tensor '" + name + "' is " + numerics::shape_string(loaded) +
                          ", config expects " + numerics::shape_string(m));
    }
    m = std::move(loaded);
  });
  return w;
}

template <typename T>
TransformerWeights<T> load_weights(const std::filesystem::path& path) {
  return weights_from_file<T>(TensorFile::load(path));
}

#define CRAYON_INSTANTIATE(T)                                                              \
  template void TensorFileWriter::add<T>(const std::string&, const numerics::Matrix<T>&); \
  template numerics::Matrix<T> TensorFile::get<T>(const std::string&) const;              \
  template numerics::Matrix<T> TensorFile::get_converted<T>(const std::string&) const;    \
  template std::string serialize_weights<T>(const TransformerWeights<T>&);                 \
  template void save_weights<T>(const std::filesystem::path&, const TransformerWeights<T>&); \
  template TransformerWeights<T> weights_from_file<T>(const TensorFile&);                   \
  template TransformerWeights<T> load_weights<T>(const std::filesystem::path&);

CRAYON_INSTANTIATE(float)
CRAYON_INSTANTIATE(double)
#undef CRAYON_INSTANTIATE

}  // namespace crayon::model
