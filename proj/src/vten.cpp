#include "vidattack/vten.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace vidattack {

namespace {

constexpr char kMagic[4] = {'V', 'T', 'E', 'N'};
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 31;

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    throw FormatError(std::string("VTEN: truncated while reading ") + what);
  }
}

std::uint32_t get_u32(std::istream& in, const char* what) {
  unsigned char b[4];
  read_exact(in, reinterpret_cast<char*>(b), 4, what);
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) |
         (std::uint32_t{b[3]} << 24);
}

}  // namespace

void write_vten(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVtenVersion));
  out.put(static_cast<char>(t.rank()));
  for (auto e : t.shape()) {
    if (e > std::numeric_limits<std::uint32_t>::max()) throw FormatError("VTEN: extent exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(e));
  }
  for (double v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (!out) throw FormatError("VTEN: write failed");
}

Tensor read_vten(std::istream& in) {
  char magic[4];
  read_exact(in, magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("VTEN: bad magic");
  char header[2];
  read_exact(in, header, 2, "header");
  const auto version = static_cast<std::uint8_t>(header[0]);
  const auto rank = static_cast<std::uint8_t>(header[1]);
  if (version != kVtenVersion) {
    throw UnsupportedVersionError("VTEN: unsupported version " + std::to_string(version));
  }
  if (rank > 4) throw FormatError("VTEN: rank " + std::to_string(rank) + " exceeds 4");
  Shape shape;
  std::uint64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const auto e = get_u32(in, "extents");
    count *= e;
    if (count > kMaxElements) throw FormatError("VTEN: extent product overflows element limit");
    shape.push_back(e);
  }
  std::vector<double> data(count);
  for (auto& v : data) v = static_cast<double>(std::bit_cast<float>(get_u32(in, "payload")));
  return Tensor(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> encode_vten(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write_vten(os, t);
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

Tensor decode_vten(const std::vector<std::uint8_t>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return read_vten(is);
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_vten(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_vten(in);
}

void round_to_float32(Tensor& t) {
  for (auto& v : t.mutable_data()) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace vidattack
