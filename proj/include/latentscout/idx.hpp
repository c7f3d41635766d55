#pragma once

// IDX tensor files (the MNIST distribution format): two zero bytes, a type
// byte, a rank byte, `rank` big-endian u32 dimensions, then the row-major
// big-endian payload.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "latentscout/error.hpp"
#include "latentscout/fsutil.hpp"

namespace latentscout::idx {

enum class ElementType : std::uint8_t {
  U8 = 0x08,
  I8 = 0x09,
  I16 = 0x0B,
  I32 = 0x0C,
  F32 = 0x0D,
  F64 = 0x0E,
};

struct IdxArray {
  ElementType type = ElementType::U8;
  std::vector<std::uint32_t> shape;
  std::variant<std::vector<std::uint8_t>, std::vector<std::int8_t>, std::vector<std::int16_t>,
               std::vector<std::int32_t>, std::vector<float>, std::vector<double>>
      values;

  std::size_t count() const {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  /// Element values widened to double regardless of storage type.
  std::vector<double> as_double() const {
    return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, values);
  }

  friend bool operator==(const IdxArray&, const IdxArray&) = default;
};

inline std::size_t element_size(ElementType t) {
  switch (t) {
    case ElementType::U8:
    case ElementType::I8: return 1;
    case ElementType::I16: return 2;
    case ElementType::I32:
    case ElementType::F32: return 4;
    case ElementType::F64: return 8;
  }
  return 0;
}

namespace detail {

template <class T>
T read_be(const unsigned char* p) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = p[sizeof(T) - 1 - i];
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

template <class T>
void write_be(std::string& out, T v) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>(buf[sizeof(T) - 1 - i]));
}

template <class T>
std::vector<T> decode_payload(const unsigned char* p, std::size_t n) {
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = read_be<T>(p + i * sizeof(T));
  return out;
}

}  // namespace detail

inline IdxArray parse_idx_bytes(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();
  if (size < 4) throw ParseError("IDX header truncated", size);
  if (p[0] != 0 || p[1] != 0) throw ParseError("bad IDX magic: leading bytes must be zero", p[0] != 0 ? 0 : 1);
  IdxArray out;
  switch (p[2]) {
    case 0x08: case 0x09: case 0x0B: case 0x0C: case 0x0D: case 0x0E:
      out.type = static_cast<ElementType>(p[2]);
      break;
    default:
      throw ParseError("unsupported IDX type byte " + std::to_string(p[2]), 2);
  }
  const std::size_t rank = p[3];
  const std::size_t header = 4 + 4 * rank;
  if (size < header) throw ParseError("IDX dimension list truncated", size);
  for (std::size_t r = 0; r < rank; ++r) out.shape.push_back(detail::read_be<std::uint32_t>(p + 4 + 4 * r));
  const std::size_t n = out.count();
  const std::size_t expected_end = header + n * element_size(out.type);
  if (size < expected_end)
    throw ParseError("IDX payload truncated: expected " + std::to_string(n * element_size(out.type)) +
                         " payload bytes, found " + std::to_string(size - header),
                     size);
  if (size > expected_end) throw ParseError("trailing bytes after IDX payload", expected_end);
  const unsigned char* payload = p + header;
  switch (out.type) {
    case ElementType::U8: out.values = std::vector<std::uint8_t>(payload, payload + n); break;
    case ElementType::I8: out.values = detail::decode_payload<std::int8_t>(payload, n); break;
    case ElementType::I16: out.values = detail::decode_payload<std::int16_t>(payload, n); break;
    case ElementType::I32: out.values = detail::decode_payload<std::int32_t>(payload, n); break;
    case ElementType::F32: out.values = detail::decode_payload<float>(payload, n); break;
    case ElementType::F64: out.values = detail::decode_payload<double>(payload, n); break;
  }
  return out;
}

inline IdxArray parse_idx(const std::filesystem::path& path) { return parse_idx_bytes(read_file(path)); }

inline std::string serialize_idx(const IdxArray& a) {
  if (a.shape.size() > 255) throw ContractError("IDX rank exceeds 255");
  std::string out{'\0', '\0', static_cast<char>(a.type), static_cast<char>(a.shape.size())};
  for (auto d : a.shape) detail::write_be<std::uint32_t>(out, d);
  std::visit(
      [&](const auto& v) {
        if (v.size() != a.count()) throw ContractError("IDX value count does not match shape");
        for (auto x : v) detail::write_be(out, x);
      },
      a.values);
  return out;
}

inline void write_idx(const std::filesystem::path& path, const IdxArray& a) { write_atomic(path, serialize_idx(a)); }

}  // namespace latentscout::idx
