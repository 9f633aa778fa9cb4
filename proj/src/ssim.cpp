#include <algorithm>
#include <cmath>

#include "blockdance/profiler/profiler.hpp"

namespace blockdance {

namespace {

// Summed-area table with a zero border: S(i, j) = sum of x over [0,i)x[0,j).
MatrixR integral(const MatrixR& x) {
  MatrixR s = MatrixR::Zero(x.rows() + 1, x.cols() + 1);
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) {
      s(i + 1, j + 1) = x(i, j) + s(i, j + 1) + s(i + 1, j) - s(i, j);
    }
  }
  return s;
}

Real box(const MatrixR& s, Index i, Index j, Index w) {
  return s(i + w, j + w) - s(i, j + w) - s(i + w, j) + s(i, j);
}

Real ssim_channel(const MatrixR& a, const MatrixR& b, Real range,
                  const SsimOptions& opt) {
  const Index w = opt.window;
  const Real n = static_cast<Real>(w * w);
  const Real c1 = (opt.k1 * range) * (opt.k1 * range);
  const Real c2 = (opt.k2 * range) * (opt.k2 * range);
  const MatrixR sa = integral(a), sb = integral(b);
  const MatrixR saa = integral(a.cwiseProduct(a));
  const MatrixR sbb = integral(b.cwiseProduct(b));
  const MatrixR sab = integral(a.cwiseProduct(b));
  Real total = 0;
  Index count = 0;
  for (Index i = 0; i + w <= a.rows(); ++i) {
    for (Index j = 0; j + w <= a.cols(); ++j) {
      const Real mu_a = box(sa, i, j, w) / n;
      const Real mu_b = box(sb, i, j, w) / n;
      const Real var_a = std::max(0.0, box(saa, i, j, w) / n - mu_a * mu_a);
      const Real var_b = std::max(0.0, box(sbb, i, j, w) / n - mu_b * mu_b);
      const Real cov = box(sab, i, j, w) / n - mu_a * mu_b;
      total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
      ++count;
    }
  }
  return total / static_cast<Real>(count);
}

void check_shapes(const MatrixR& a, const MatrixR& b, const SsimOptions& opt) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError("ssim: image shapes differ");
  }
  if (opt.window < 1 || a.rows() < opt.window || a.cols() < opt.window) {
    throw ConfigError("ssim: image smaller than the " +
                      std::to_string(opt.window) + "x" +
                      std::to_string(opt.window) + " window");
  }
}

}  // namespace

Real ssim(const std::vector<MatrixR>& a, const std::vector<MatrixR>& b,
          const SsimOptions& opt) {
  if (a.empty() || a.size() != b.size()) {
    throw DimensionError("ssim: channel counts differ or are zero");
  }
  Real lo = std::numeric_limits<Real>::infinity();
  Real hi = -lo;
  for (std::size_t c = 0; c < a.size(); ++c) {
    check_shapes(a[c], b[c], opt);
    lo = std::min({lo, a[c].minCoeff(), b[c].minCoeff()});
    hi = std::max({hi, a[c].maxCoeff(), b[c].maxCoeff()});
  }
  const Real range = hi - lo;
  // Both images are the same constant.
  if (range == 0) return 1.0;
  Real total = 0;
  for (std::size_t c = 0; c < a.size(); ++c) {
    total += ssim_channel(a[c], b[c], range, opt);
  }
  return total / static_cast<Real>(a.size());
}

Real ssim(const MatrixR& a, const MatrixR& b, const SsimOptions& opt) {
  return ssim(std::vector<MatrixR>{a}, std::vector<MatrixR>{b}, opt);
}

std::vector<MatrixR> latent_to_image(const MatrixR& latent) {
  const Index T = latent.rows();
  const Index side = static_cast<Index>(std::llround(std::sqrt(T)));
  if (side * side != T) {
    throw DimensionError("latent_to_image: token count is not a square");
  }
  std::vector<MatrixR> channels;
  for (Index c = 0; c < latent.cols(); ++c) {
    MatrixR img(side, side);
    for (Index t = 0; t < T; ++t) img(t / side, t % side) = latent(t, c);
    channels.push_back(std::move(img));
  }
  return channels;
}

Real latent_ssim(const MatrixR& a, const MatrixR& b, SsimOptions opt) {
  auto ia = latent_to_image(a);
  auto ib = latent_to_image(b);
  opt.window = std::min<int>(opt.window, static_cast<int>(ia.front().rows()));
  return ssim(ia, ib, opt);
}

}  // namespace blockdance
