#include "sparseflow/core/tensor_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "sparseflow/core/error.hpp"

namespace sparseflow {

namespace {

constexpr const char* kMagic = "f64le";

void put_le(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  os.write(bytes, 8);
}

double get_le(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
  os << kMagic;
  for (auto e : t.shape()) os << ' ' << e;
  os << '\n';
  for (double v : t.data()) put_le(os, v);
  SF_CHECK(static_cast<bool>(os), ErrorKind::Io, "failed writing tensor");
}

Tensor read_tensor(std::istream& is) {
  std::string header;
  SF_CHECK(static_cast<bool>(std::getline(is, header)), ErrorKind::Io, "missing tensor header");
  std::istringstream hs(header);
  std::string magic;
  hs >> magic;
  SF_CHECK(magic == kMagic, ErrorKind::Io, "bad tensor magic '" + magic + "'");
  Shape shape;
  std::size_t e;
  while (hs >> e) shape.push_back(e);
  SF_CHECK(hs.eof(), ErrorKind::Io, "malformed tensor header '" + header + "'");
  SF_CHECK(!shape.empty(), ErrorKind::Io, "tensor header has no extents");
  const std::size_t n = shape_volume(shape);
  std::vector<unsigned char> raw(n * 8);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  SF_CHECK(static_cast<std::size_t>(is.gcount()) == raw.size(), ErrorKind::Io, "truncated tensor payload");
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = get_le(raw.data() + 8 * i);
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  SF_CHECK(static_cast<bool>(os), ErrorKind::Io, "cannot open " + path.string());
  write_tensor(os, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  SF_CHECK(static_cast<bool>(is), ErrorKind::Io, "cannot open " + path.string());
  return read_tensor(is);
}

}  // namespace sparseflow
