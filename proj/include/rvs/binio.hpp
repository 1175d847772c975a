#ifndef RVS_BINIO_HPP
#define RVS_BINIO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "rvs/tensor.hpp"

// Little-endian primitive encoding shared by the dataset and checkpoint formats.
namespace rvs::binio {

template <typename U>
void put_uint(std::ostream& os, U v) {
  unsigned char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get_uint(std::istream& is, const char* what) {
  unsigned char b[sizeof(U)];
  const auto pos = is.tellg();
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U)))
    throw FormatError(std::string("truncated input reading ") + what + " at byte offset " +
                      std::to_string(static_cast<long long>(pos)));
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U(b[i]) << (8 * i));
  return v;
}

inline void put_f32(std::ostream& os, float v) { put_uint(os, std::bit_cast<std::uint32_t>(v)); }
inline void put_f64(std::ostream& os, double v) { put_uint(os, std::bit_cast<std::uint64_t>(v)); }
inline float get_f32(std::istream& is, const char* what) {
  return std::bit_cast<float>(get_uint<std::uint32_t>(is, what));
}
inline double get_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(get_uint<std::uint64_t>(is, what));
}

inline void put_bytes(std::ostream& os, const std::string& s) { os.write(s.data(), static_cast<std::streamsize>(s.size())); }

inline std::string get_bytes(std::istream& is, std::size_t n, const char* what) {
  std::string s(n, '\0');
  const auto pos = is.tellg();
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n)))
    throw FormatError(std::string("truncated input reading ") + what + " at byte offset " +
                      std::to_string(static_cast<long long>(pos)));
  return s;
}

/// Bulk float32 array.
inline void put_f32_array(std::ostream& os, std::span<const float> v) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
  } else {
    for (float f : v) put_f32(os, f);
  }
}

inline void get_f32_array(std::istream& is, std::span<float> out, const char* what) {
  if constexpr (std::endian::native == std::endian::little) {
    const auto pos = is.tellg();
    if (!is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * 4)))
      throw FormatError(std::string("truncated input reading ") + what + " at byte offset " +
                        std::to_string(static_cast<long long>(pos)));
  } else {
    for (auto& f : out) f = get_f32(is, what);
  }
}

}  // namespace rvs::binio

#endif  // RVS_BINIO_HPP
