#ifndef BLOCKDANCE_PROFILER_PROFILER_HPP_
#define BLOCKDANCE_PROFILER_PROFILER_HPP_

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockdance/diffusion/sampler.hpp"
#include "blockdance/numeric/tensor.hpp"

namespace blockdance {

struct CompletenessError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FeatureRecord {
  int step_index = 0;
  int train_timestep = 0;
  int block_index = 0;
  MatrixR values;
};

/// Tapped block features of one run, ordered by (step, block).
struct FeatureLog {
  int tokens = 0;
  int width = 0;
  std::vector<FeatureRecord> records;

  /// nullptr when (step, block) was not recorded.
  const FeatureRecord* find(int step_index, int block_index) const;
  int step_count() const;
};

FeatureLog record_features(const SampleResult& run);

// On disk: `<dir>/features.tensor` is one rank-3 dump [records, T, d];
// `<dir>/features.json` lists (step_index, train_timestep, block_index) per
// record in the same order.
void write_feature_log(const FeatureLog& log, const std::filesystem::path& dir);
FeatureLog read_feature_log(const std::filesystem::path& dir);

/// values(t, b - 1) = Frobenius distance between block b outputs at steps
/// t and t + 1. Size (steps - 1) x depth.
MatrixR l2_surface(const FeatureLog& log, int depth);

/// Step x step cosine similarity of the flattened block features. A zero
/// feature has similarity 0 against everything except itself (1).
MatrixR cosine_matrix(const FeatureLog& log, int block_index);

struct SsimOptions {
  int window = 8;
  Real k1 = 0.01;
  Real k2 = 0.03;
};

/// Mean SSIM over all window positions (stride 1, uniform window, population
/// statistics). Dynamic range is max - min over both images.
Real ssim(const MatrixR& a, const MatrixR& b, const SsimOptions& opt = {});

/// Multi-channel images given as one matrix per channel; channel mean. The
/// dynamic range is taken over all channels of both images.
Real ssim(const std::vector<MatrixR>& a, const std::vector<MatrixR>& b,
          const SsimOptions& opt = {});

/// Token grid (T x C) -> C images of side sqrt(T), row-major token order.
std::vector<MatrixR> latent_to_image(const MatrixR& latent);

/// SSIM of two latents viewed as images. The window is shrunk to the image
/// side when the side is below opt.window.
Real latent_ssim(const MatrixR& a, const MatrixR& b, SsimOptions opt = {});

struct PcaResult {
  MatrixR projection;  // T x effective_k
  MatrixR components;  // d x effective_k, columns are eigenvectors
  VectorR eigenvalues; // non-increasing, length effective_k
  VectorR mean;        // d
  Real total_variance = 0;
  int effective_k = 0;
  std::string warning;  // non-empty when k was reduced

  MatrixR reconstruct() const;
  Real captured_variance_fraction() const;
};

/// Projects token vectors onto the top-k eigenvectors of the d x d sample
/// covariance. Each eigenvector's largest-magnitude entry is made positive.
PcaResult pca_project(const MatrixR& features, int k);

}  // namespace blockdance

#endif  // BLOCKDANCE_PROFILER_PROFILER_HPP_
