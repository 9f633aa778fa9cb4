#ifndef BLOCKDANCE_NUMERIC_OPS_HPP_
#define BLOCKDANCE_NUMERIC_OPS_HPP_

#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>

#include "blockdance/numeric/tensor.hpp"

namespace blockdance {

// Counts multiply-accumulates performed by matmul-shaped kernels. Owned by
// a single forward call; never shared between threads.
struct MacCounter {
  std::uint64_t macs = 0;
  void add(std::uint64_t n) { macs += n; }
};

inline void count_macs(MacCounter* counter, std::uint64_t n) {
  if (counter != nullptr) counter->add(n);
}

/// Plain matrix product with a fixed summation order: each output element
/// accumulates a(i,0)*b(0,j) + a(i,1)*b(1,j) + ... left to right.
template <typename Scalar>
Matrix<Scalar> matmul(const Matrix<Scalar>& a, const Matrix<Scalar>& b,
                      MacCounter* counter = nullptr) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ (" +
                         std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()) + ")");
  }
  const Index m = a.rows(), k = a.cols(), n = b.cols();
  Matrix<Scalar> c = Matrix<Scalar>::Zero(m, n);
  for (Index i = 0; i < m; ++i) {
    Scalar* __restrict crow = c.data() + i * n;
    for (Index p = 0; p < k; ++p) {
      const Scalar aip = a(i, p);
      const Scalar* __restrict brow = b.data() + p * n;
      for (Index j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  count_macs(counter, static_cast<std::uint64_t>(m * k * n));
  return c;
}

/// a * b^T without materializing the transpose.
template <typename Scalar>
Matrix<Scalar> matmul_transposed(const Matrix<Scalar>& a,
                                 const Matrix<Scalar>& b,
                                 MacCounter* counter = nullptr) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_transposed: inner dimensions differ");
  }
  const Index m = a.rows(), k = a.cols(), n = b.rows();
  Matrix<Scalar> c(m, n);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < n; ++j) {
      Scalar acc = 0;
      for (Index p = 0; p < k; ++p) acc += a(i, p) * b(j, p);
      c(i, j) = acc;
    }
  }
  count_macs(counter, static_cast<std::uint64_t>(m * k * n));
  return c;
}

/// x * W + bias (bias broadcast over rows). W is stored in-by-out.
template <typename Scalar>
Matrix<Scalar> linear(const Matrix<Scalar>& x, const Matrix<Scalar>& weight,
                      const Vector<Scalar>& bias,
                      MacCounter* counter = nullptr) {
  if (bias.size() != weight.cols()) {
    throw DimensionError("linear: bias length != output width");
  }
  Matrix<Scalar> y = matmul(x, weight, counter);
  y.rowwise() += bias.transpose();
  return y;
}

/// Row vector form of linear; used for conditioning vectors.
template <typename Scalar>
Vector<Scalar> linear(const Vector<Scalar>& x, const Matrix<Scalar>& weight,
                      const Vector<Scalar>& bias,
                      MacCounter* counter = nullptr) {
  Matrix<Scalar> row = x.transpose();
  Matrix<Scalar> y = linear(row, weight, bias, counter);
  return y.row(0).transpose();
}

/// Row-wise layer normalization. A zero-variance row normalizes to zeros
/// before the affine part.
template <typename Scalar>
Matrix<Scalar> layernorm(const Matrix<Scalar>& x, const Vector<Scalar>& gain,
                         const Vector<Scalar>& bias, Scalar eps = Scalar(1e-5)) {
  const Index d = x.cols();
  if (d == 0) throw DimensionError("layernorm: zero-width rows");
  if (gain.size() != d || bias.size() != d) {
    throw DimensionError("layernorm: gain/bias width mismatch");
  }
  if (!(eps > 0)) throw ConfigError("layernorm: eps must be positive");
  Matrix<Scalar> y(x.rows(), d);
  for (Index r = 0; r < x.rows(); ++r) {
    Scalar mean = 0;
    for (Index j = 0; j < d; ++j) mean += x(r, j);
    mean /= Scalar(d);
    Scalar var = 0;
    for (Index j = 0; j < d; ++j) {
      const Scalar c = x(r, j) - mean;
      var += c * c;
    }
    var /= Scalar(d);
    const Scalar inv = var > 0 ? Scalar(1) / std::sqrt(var + eps) : Scalar(0);
    for (Index j = 0; j < d; ++j) {
      y(r, j) = (x(r, j) - mean) * inv * gain(j) + bias(j);
    }
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> layernorm(const Matrix<Scalar>& x, Scalar eps = Scalar(1e-5)) {
  const Index d = x.cols();
  return layernorm<Scalar>(x, Vector<Scalar>::Ones(d), Vector<Scalar>::Zero(d),
                           eps);
}

template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& x) {
  Matrix<Scalar> y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < x.cols(); ++j) {
      if (!std::isfinite(x(r, j))) {
        throw DimensionError("softmax_rows: non-finite input");
      }
      mx = std::max(mx, x(r, j));
    }
    Scalar sum = 0;
    for (Index j = 0; j < x.cols(); ++j) {
      y(r, j) = std::exp(x(r, j) - mx);
      sum += y(r, j);
    }
    for (Index j = 0; j < x.cols(); ++j) y(r, j) /= sum;
  }
  return y;
}

// GELU, tanh approximation.
template <std::floating_point Scalar>
Scalar gelu(Scalar x) {
  constexpr Scalar k = Scalar(0.7978845608028654);  // sqrt(2/pi)
  const Scalar inner = k * (x + Scalar(0.044715) * x * x * x);
  return Scalar(0.5) * x * (Scalar(1) + std::tanh(inner));
}

template <std::floating_point Scalar>
Scalar gelu_derivative(Scalar x) {
  constexpr Scalar k = Scalar(0.7978845608028654);
  const Scalar inner = k * (x + Scalar(0.044715) * x * x * x);
  const Scalar th = std::tanh(inner);
  const Scalar dinner = k * (Scalar(1) + Scalar(3 * 0.044715) * x * x);
  return Scalar(0.5) * (Scalar(1) + th) +
         Scalar(0.5) * x * (Scalar(1) - th * th) * dinner;
}

template <std::floating_point Scalar>
Scalar silu(Scalar x) {
  return x / (Scalar(1) + std::exp(-x));
}

template <std::floating_point Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

template <typename Derived>
auto gelu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return gelu(v); });
}

template <typename Derived>
auto silu(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  return x.unaryExpr([](Scalar v) { return silu(v); });
}

/// Sinusoidal embedding of a scalar position, base 10000. First half cos,
/// second half sin; odd widths get a trailing zero.
template <typename Scalar>
Vector<Scalar> sinusoidal_embedding(Scalar position, Index width) {
  Vector<Scalar> e = Vector<Scalar>::Zero(width);
  const Index half = width / 2;
  for (Index j = 0; j < half; ++j) {
    const Scalar freq =
        std::exp(-std::log(Scalar(10000)) * Scalar(j) / Scalar(half));
    e(j) = std::cos(position * freq);
    e(half + j) = std::sin(position * freq);
  }
  return e;
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& x) {
  return x.allFinite();
}

}  // namespace blockdance

#endif  // BLOCKDANCE_NUMERIC_OPS_HPP_
