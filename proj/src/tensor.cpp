#include "blockdance/numeric/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace blockdance {

static_assert(std::endian::native == std::endian::little,
              "tensor dump I/O assumes a little-endian host");

std::uint64_t TensorRecord::element_count() const {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

TensorRecord to_record(const MatrixR& m) {
  TensorRecord r;
  r.shape = {static_cast<std::uint64_t>(m.rows()),
             static_cast<std::uint64_t>(m.cols())};
  r.data.assign(m.data(), m.data() + m.size());
  return r;
}

TensorRecord to_record(const VectorR& v) {
  TensorRecord r;
  r.shape = {static_cast<std::uint64_t>(v.size())};
  r.data.assign(v.data(), v.data() + v.size());
  return r;
}

MatrixR record_to_matrix(const TensorRecord& r) {
  if (r.element_count() != r.data.size()) {
    throw DimensionError("tensor record: shape does not match data length");
  }
  Index rows = 1, cols = 1;
  if (r.shape.size() == 1) {
    rows = static_cast<Index>(r.shape[0]);
  } else if (r.shape.size() >= 2) {
    cols = static_cast<Index>(r.shape.back());
    rows = static_cast<Index>(r.data.size()) / std::max<Index>(cols, 1);
  }
  MatrixR m(rows, cols);
  std::copy(r.data.begin(), r.data.end(), m.data());
  return m;
}

std::uint64_t dump_size_bytes(const TensorRecord& r) {
  return 8 + 8 * r.shape.size() + 8 * r.data.size();
}

namespace {

void put_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t get_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw IoError("tensor dump: truncated header");
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const TensorRecord& r) {
  if (r.element_count() != r.data.size()) {
    throw DimensionError("tensor record: shape does not match data length");
  }
  put_u64(out, r.shape.size());
  for (auto d : r.shape) put_u64(out, d);
  out.write(reinterpret_cast<const char*>(r.data.data()),
            static_cast<std::streamsize>(r.data.size() * sizeof(double)));
  if (!out) throw IoError("tensor dump: write failed");
}

TensorRecord read_tensor(std::istream& in) {
  TensorRecord r;
  const std::uint64_t rank = get_u64(in);
  if (rank > 16) throw IoError("tensor dump: implausible rank");
  r.shape.resize(rank);
  for (auto& d : r.shape) d = get_u64(in);
  r.data.resize(r.element_count());
  in.read(reinterpret_cast<char*>(r.data.data()),
          static_cast<std::streamsize>(r.data.size() * sizeof(double)));
  if (!in) throw IoError("tensor dump: truncated payload");
  return r;
}

void save_tensor(const std::filesystem::path& path, const TensorRecord& r) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_tensor(out, r);
}

TensorRecord load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  try {
    return read_tensor(in);
  } catch (const IoError& e) {
    throw IoError(std::string(e.what()) + ": " + path.string());
  }
}

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t checksum(const MatrixR& m) {
  const Index dims[2] = {m.rows(), m.cols()};
  std::uint64_t h = fnv1a64(dims, sizeof dims);
  return fnv1a64(m.data(), static_cast<std::size_t>(m.size()) * sizeof(double),
                 h);
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

}  // namespace blockdance
