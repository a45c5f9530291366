#ifndef MESHMODES_BINARY_IO_H_
#define MESHMODES_BINARY_IO_H_

#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "meshmodes/types.h"

namespace meshmodes::binary {

// Little-endian encoders; the build targets little-endian hosts only.
static_assert(sizeof(double) == 8);

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.append(b, 4);
}

inline void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.append(b, 8);
}

inline void put_f64s(std::string& out, const double* v, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) put_f64(out, v[i]);
}

/// Bounds-checked cursor over a byte buffer.
class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}

  std::string_view take(std::size_t n) {
    if (n > data_.size() - pos_) throw DataError("unexpected end of data");
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }

  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(s[i])) << (8 * i);
    }
    return v;
  }

  double f64() {
    auto s = take(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
      bits |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(s[i])) << (8 * i);
    }
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  void f64s(double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f64();
  }

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  std::string_view rest() { return take(remaining()); }

 private:
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace meshmodes::binary

#endif  // MESHMODES_BINARY_IO_H_
