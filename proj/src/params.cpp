#include "emir/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>

namespace emir {

Tensor fanin_uniform(const Shape& s, std::int64_t fan_in, Rng& rng) {
  check(fan_in > 0, "fanin_uniform: fan_in must be positive");
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t = Tensor::zeros(s);
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

namespace {

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  check(is.good(), "ETSR: truncated file");
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

template <class T>
void put_le(std::ostream& os, T v) {
  static_assert(sizeof(T) == 4 || sizeof(T) == 8);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  std::reverse(b, b + sizeof(T));
#endif
  os.write(reinterpret_cast<char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  is.read(reinterpret_cast<char*>(b), sizeof(T));
  check(is.good(), "ETSR: truncated payload");
#if defined(__BYTE_ORDER__) && __BYTE_ORDER__ == __ORDER_BIG_ENDIAN__
  std::reverse(b, b + sizeof(T));
#endif
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}

}  // namespace

void write_etsr_stream(const Tensor& t, std::ostream& os, int version) {
  check(version == 1 || version == 2, "ETSR: unknown version");
  os.write("ETSR", 4);
  const char ver = static_cast<char>(version);
  os.write(&ver, 1);
  put_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (int i = 0; i < t.rank(); ++i)
    put_u32(os, static_cast<std::uint32_t>(t.dim(i)));
  for (double v : t.data()) {
    if (version == 1)
      put_le<float>(os, static_cast<float>(v));
    else
      put_le<double>(os, v);
  }
}

Tensor read_etsr_stream(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  check(is.good() && std::memcmp(magic, "ETSR", 4) == 0,
        "ETSR: bad magic bytes");
  char ver;
  is.read(&ver, 1);
  check(is.good() && (ver == 1 || ver == 2), "ETSR: unsupported version");
  const std::uint32_t rank = get_u32(is);
  check(rank <= 8, "ETSR: implausible rank");
  Shape s(rank);
  for (auto& d : s) {
    d = get_u32(is);
    check(d > 0, "ETSR: non-positive extent");
  }
  std::vector<double> data(numel_of(s));
  for (auto& v : data)
    v = ver == 1 ? static_cast<double>(get_le<float>(is)) : get_le<double>(is);
  return Tensor::from(s, std::move(data));
}

void write_etsr(const Tensor& t, const std::string& path, int version) {
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "write_etsr: cannot open " + path);
  write_etsr_stream(t, os, version);
  check(os.good(), "write_etsr: write failed for " + path);
}

Tensor read_etsr(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "read_etsr: cannot open " + path);
  return read_etsr_stream(is);
}

}  // namespace emir
