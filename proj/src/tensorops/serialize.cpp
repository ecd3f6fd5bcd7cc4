#include "llts/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "llts/errors.hpp"

namespace llts {

namespace {
constexpr char kMagic[4] = {'L', 'L', 'T', 'S'};
constexpr std::uint32_t kMaxRank = 8;
}  // namespace

void write_u32_le(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw DataError("tensor container: truncated header");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void write_tensor(std::ostream& os, const Tensor& t) {
  os.write(kMagic, 4);
  write_u32_le(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t e : t.shape()) write_u32_le(os, static_cast<std::uint32_t>(e));
  for (double v : t.data()) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
  }
  if (!os) throw DataError("tensor container: write failed");
}

Tensor read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("tensor container: bad magic");
  const std::uint32_t rank = read_u32_le(is);
  if (rank == 0 || rank > kMaxRank) throw DataError("tensor container: bad rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) {
    e = read_u32_le(is);
    if (e == 0) throw DataError("tensor container: zero extent");
  }
  std::vector<double> values(shape_numel(shape));
  for (double& v : values) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw DataError("tensor container: truncated payload");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    v = std::bit_cast<double>(bits);
  }
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace llts
