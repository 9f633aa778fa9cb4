#ifndef BLOCKDANCE_NUMERIC_TENSOR_HPP_
#define BLOCKDANCE_NUMERIC_TENSOR_HPP_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace blockdance {

using Real = double;
using Index = Eigen::Index;

template <typename Scalar>
using Matrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using MatrixR = Matrix<Real>;
using VectorR = Vector<Real>;

struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Binary tensor dump: little-endian u64 rank, u64 dims, then f64 values in
// row-major order. Rank is arbitrary on disk; in memory the payload is a
// flat vector plus its shape.
struct TensorRecord {
  std::vector<std::uint64_t> shape;
  std::vector<double> data;

  std::uint64_t element_count() const;
  bool operator==(const TensorRecord&) const = default;
};

TensorRecord to_record(const MatrixR& m);
TensorRecord to_record(const VectorR& v);
MatrixR record_to_matrix(const TensorRecord& r);

std::uint64_t dump_size_bytes(const TensorRecord& r);

void write_tensor(std::ostream& out, const TensorRecord& r);
TensorRecord read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const TensorRecord& r);
TensorRecord load_tensor(const std::filesystem::path& path);

// FNV-1a over raw bytes; used for checksums and config hashes.
std::uint64_t fnv1a64(const void* data, std::size_t size,
                      std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t checksum(const MatrixR& m);

std::string hex64(std::uint64_t v);

}  // namespace blockdance

#endif  // BLOCKDANCE_NUMERIC_TENSOR_HPP_
