#include "blockdance/numeric/rng.hpp"

#include <cmath>
#include <numbers>

namespace blockdance {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi,
                    std::uint32_t& lo) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

inline double to_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits =
      ((static_cast<std::uint64_t>(hi) << 32) | lo) >> 11;
  return static_cast<double>(bits) * 0x1.0p-53;
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

std::array<std::uint32_t, 4> RngStream::next_block() {
  const std::array<std::uint32_t, 4> ctr = {
      static_cast<std::uint32_t>(counter_),
      static_cast<std::uint32_t>(counter_ >> 32),
      static_cast<std::uint32_t>(stream_id_),
      static_cast<std::uint32_t>(stream_id_ >> 32)};
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(seed_),
      static_cast<std::uint32_t>(seed_ >> 32)};
  ++counter_;
  return philox4x32_10(ctr, key);
}

double RngStream::next_uniform() {
  const auto w = next_block();
  return to_unit(w[0], w[1]);
}

std::array<double, 2> RngStream::next_normal_pair() {
  const auto w = next_block();
  // u1 in (0, 1] keeps the log finite.
  const double u1 = 1.0 - to_unit(w[0], w[1]);
  const double u2 = to_unit(w[2], w[3]);
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  return {radius * std::cos(theta), radius * std::sin(theta)};
}

MatrixR gaussian(RngStream& rng, Index rows, Index cols) {
  MatrixR out(rows, cols);
  const Index n = rows * cols;
  double* p = out.data();
  for (Index i = 0; i < n; i += 2) {
    const auto pair = rng.next_normal_pair();
    p[i] = pair[0];
    if (i + 1 < n) p[i + 1] = pair[1];
  }
  return out;
}

VectorR gaussian(RngStream& rng, Index size) {
  MatrixR m = gaussian(rng, size, 1);
  return Eigen::Map<VectorR>(m.data(), size);
}

}  // namespace blockdance
