#ifndef BLOCKDANCE_NUMERIC_RNG_HPP_
#define BLOCKDANCE_NUMERIC_RNG_HPP_

#include <array>
#include <cstdint>

#include "blockdance/numeric/tensor.hpp"

namespace blockdance {

/// Philox4x32-10 block function. Counter words are (lo, hi, lo, hi) of two
/// 64-bit values; key is the 64-bit seed split into two words.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key);

/// Counter-based random stream. The value sequence is a pure function of
/// (seed, stream_id); `counter` is the index of the next Philox block.
/// Streams with different ids never share a counter block.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id,
            std::uint64_t counter = 0)
      : seed_(seed), stream_id_(stream_id), counter_(counter) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  std::uint64_t counter() const { return counter_; }

  /// Consumes one block, returns its four words.
  std::array<std::uint32_t, 4> next_block();

  /// Uniform in [0, 1) with 53 random bits; consumes one block.
  double next_uniform();

  /// Two standard normals from one block via Box-Muller.
  std::array<double, 2> next_normal_pair();

  RngStream fork(std::uint64_t stream_id) const {
    return RngStream(seed_, stream_id, 0);
  }

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t counter_ = 0;
};

/// i.i.d. N(0, 1) matrix, filled row-major. Both Box-Muller outputs are
/// used; with an odd element count the last spare is discarded.
MatrixR gaussian(RngStream& rng, Index rows, Index cols);
VectorR gaussian(RngStream& rng, Index size);

}  // namespace blockdance

#endif  // BLOCKDANCE_NUMERIC_RNG_HPP_
