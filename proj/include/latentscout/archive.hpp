#pragma once

// Binary container used for dataset archives and model checkpoints:
//
//   "LSAR" | u32 container version | u64 manifest length | manifest JSON
//   u32 array count, then per array:
//   u32 name length | name | u8 dtype | u32 rank | u64 dims[rank] | payload
//
// All integers little-endian; payload is row-major little-endian.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "latentscout/error.hpp"
#include "latentscout/fsutil.hpp"

namespace latentscout {

using json = nlohmann::json;

enum class DType : std::uint8_t { U8 = 1, I32 = 2, F32 = 3, F64 = 4 };

template <class T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, std::uint8_t>) return DType::U8;
  else if constexpr (std::is_same_v<T, std::int32_t>) return DType::I32;
  else if constexpr (std::is_same_v<T, float>) return DType::F32;
  else {
    static_assert(std::is_same_v<T, double>);
    return DType::F64;
  }
}

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::U8: return 1;
    case DType::I32: return 4;
    case DType::F32: return 4;
    case DType::F64: return 8;
  }
  return 0;
}

struct ArrayBlob {
  DType dtype = DType::U8;
  std::vector<std::uint64_t> shape;
  std::string bytes;
};

class Archive {
 public:
  static constexpr std::uint32_t kContainerVersion = 1;

  json manifest = json::object();

  template <class T>
  void put(const std::string& name, std::vector<std::uint64_t> shape, const std::vector<T>& values) {
    ArrayBlob blob;
    blob.dtype = dtype_of<T>();
    blob.shape = std::move(shape);
    blob.bytes.resize(values.size() * sizeof(T));
    std::memcpy(blob.bytes.data(), values.data(), blob.bytes.size());
    arrays_[name] = std::move(blob);
  }

  bool has(const std::string& name) const { return arrays_.count(name) > 0; }

  const ArrayBlob& blob(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw ParseError("archive has no array '" + name + "'", 0);
    return it->second;
  }

  template <class T>
  std::vector<T> get(const std::string& name) const {
    const auto& b = blob(name);
    if (b.dtype != dtype_of<T>()) throw ParseError("array '" + name + "' has unexpected dtype", 0);
    std::vector<T> out(b.bytes.size() / sizeof(T));
    std::memcpy(out.data(), b.bytes.data(), b.bytes.size());
    return out;
  }

  const std::map<std::string, ArrayBlob>& arrays() const { return arrays_; }

  std::string serialize() const {
    std::string out = "LSAR";
    auto u32 = [&](std::uint32_t v) { out.append(reinterpret_cast<const char*>(&v), 4); };
    auto u64 = [&](std::uint64_t v) { out.append(reinterpret_cast<const char*>(&v), 8); };
    u32(kContainerVersion);
    const std::string m = manifest.dump();
    u64(m.size());
    out += m;
    u32(static_cast<std::uint32_t>(arrays_.size()));
    for (const auto& [name, b] : arrays_) {
      u32(static_cast<std::uint32_t>(name.size()));
      out += name;
      out.push_back(static_cast<char>(b.dtype));
      u32(static_cast<std::uint32_t>(b.shape.size()));
      for (auto d : b.shape) u64(d);
      out += b.bytes;
    }
    return out;
  }

  static Archive deserialize(const std::string& data) {
    std::size_t pos = 0;
    auto need = [&](std::size_t n) {
      if (pos + n > data.size()) throw ParseError("archive truncated", pos);
    };
    auto u32 = [&] {
      need(4);
      std::uint32_t v;
      std::memcpy(&v, data.data() + pos, 4);
      pos += 4;
      return v;
    };
    auto u64 = [&] {
      need(8);
      std::uint64_t v;
      std::memcpy(&v, data.data() + pos, 8);
      pos += 8;
      return v;
    };
    need(4);
    if (data.compare(0, 4, "LSAR") != 0) throw ParseError("bad archive magic", 0);
    pos = 4;
    const auto version = u32();
    if (version != kContainerVersion)
      throw ParseError("unsupported container version " + std::to_string(version), 4);
    const auto mlen = u64();
    need(mlen);
    Archive a;
    try {
      a.manifest = json::parse(data.substr(pos, mlen));
    } catch (const json::exception& e) {
      throw ParseError(std::string("manifest is not valid JSON: ") + e.what(), pos);
    }
    pos += mlen;
    const auto count = u32();
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto nlen = u32();
      need(nlen);
      std::string name = data.substr(pos, nlen);
      pos += nlen;
      need(1);
      ArrayBlob b;
      const auto raw = static_cast<std::uint8_t>(data[pos]);
      if (raw < 1 || raw > 4) throw ParseError("unknown dtype", pos);
      b.dtype = static_cast<DType>(raw);
      ++pos;
      const auto rank = u32();
      std::uint64_t n = 1;
      for (std::uint32_t r = 0; r < rank; ++r) {
        b.shape.push_back(u64());
        n *= b.shape.back();
      }
      const std::size_t bytes = n * dtype_size(b.dtype);
      need(bytes);
      b.bytes = data.substr(pos, bytes);
      pos += bytes;
      a.arrays_[name] = std::move(b);
    }
    return a;
  }

  void save(const fs::path& path) const { write_atomic(path, serialize()); }

  /// Loads and checks `kind` and `schema_version` recorded in the manifest.
  static Archive load(const fs::path& path, const std::string& kind, int schema_version) {
    Archive a = deserialize(read_file(path));
    if (a.manifest.value("kind", "") != kind)
      throw ParseError(path.string() + " is not a " + kind + " archive", 0);
    const int v = a.manifest.value("schema_version", -1);
    if (v != schema_version)
      throw ParseError(path.string() + ": schema version " + std::to_string(v) + " does not match expected " +
                           std::to_string(schema_version),
                       0);
    return a;
  }

 private:
  std::map<std::string, ArrayBlob> arrays_;
};

}  // namespace latentscout
