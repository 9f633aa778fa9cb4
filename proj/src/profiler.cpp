#include "blockdance/profiler/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace blockdance {

const FeatureRecord* FeatureLog::find(int step_index, int block_index) const {
  for (const auto& r : records) {
    if (r.step_index == step_index && r.block_index == block_index) return &r;
  }
  return nullptr;
}

int FeatureLog::step_count() const {
  int n = 0;
  for (const auto& r : records) n = std::max(n, r.step_index + 1);
  return n;
}

FeatureLog record_features(const SampleResult& run) {
  FeatureLog log;
  for (std::size_t j = 0; j < run.taps.size(); ++j) {
    for (const auto& f : run.taps[j]) {
      if (log.records.empty()) {
        log.tokens = static_cast<int>(f.values.rows());
        log.width = static_cast<int>(f.values.cols());
      }
      log.records.push_back(FeatureRecord{
          run.trace.steps[j].step_index, run.trace.steps[j].train_timestep,
          f.block_index, f.values});
    }
  }
  if (log.records.empty()) {
    throw CompletenessError("record_features: run has no tapped features");
  }
  return log;
}

void write_feature_log(const FeatureLog& log,
                       const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  TensorRecord all;
  all.shape = {log.records.size(), static_cast<std::uint64_t>(log.tokens),
               static_cast<std::uint64_t>(log.width)};
  all.data.reserve(all.element_count());
  nlohmann::ordered_json manifest;
  manifest["schema"] = "blockdance-feature-log/1";
  manifest["tokens"] = log.tokens;
  manifest["width"] = log.width;
  manifest["records"] = nlohmann::ordered_json::array();
  for (const auto& r : log.records) {
    if (r.values.rows() != log.tokens || r.values.cols() != log.width) {
      throw DimensionError("feature log: record shape mismatch");
    }
    all.data.insert(all.data.end(), r.values.data(),
                    r.values.data() + r.values.size());
    manifest["records"].push_back({{"step_index", r.step_index},
                                   {"train_timestep", r.train_timestep},
                                   {"block_index", r.block_index}});
  }
  save_tensor(dir / "features.tensor", all);
  const auto mpath = dir / "features.json";
  std::ofstream out(mpath, std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + mpath.string());
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("write failed: " + mpath.string());
}

FeatureLog read_feature_log(const std::filesystem::path& dir) {
  const auto mpath = dir / "features.json";
  std::ifstream in(mpath);
  if (!in) throw IoError("cannot open for reading: " + mpath.string());
  const auto manifest = nlohmann::json::parse(in);
  const TensorRecord all = load_tensor(dir / "features.tensor");
  FeatureLog log;
  log.tokens = manifest.at("tokens");
  log.width = manifest.at("width");
  const auto& recs = manifest.at("records");
  const std::size_t per = static_cast<std::size_t>(log.tokens) *
                          static_cast<std::size_t>(log.width);
  if (all.shape.size() != 3 || all.shape[0] != recs.size() ||
      all.data.size() != recs.size() * per) {
    throw IoError("feature log: manifest and tensor disagree in " + dir.string());
  }
  for (std::size_t i = 0; i < recs.size(); ++i) {
    FeatureRecord r;
    r.step_index = recs[i].at("step_index");
    r.train_timestep = recs[i].at("train_timestep");
    r.block_index = recs[i].at("block_index");
    r.values = MatrixR(log.tokens, log.width);
    std::copy_n(all.data.begin() + static_cast<std::ptrdiff_t>(i * per), per,
                r.values.data());
    log.records.push_back(std::move(r));
  }
  return log;
}

MatrixR l2_surface(const FeatureLog& log, int depth) {
  const int steps = log.step_count();
  if (steps < 2) throw CompletenessError("l2_surface: need at least two steps");
  MatrixR surface(steps - 1, depth);
  for (int t = 0; t + 1 < steps; ++t) {
    for (int b = 1; b <= depth; ++b) {
      const FeatureRecord* x = log.find(t, b);
      const FeatureRecord* y = log.find(t + 1, b);
      if (x == nullptr || y == nullptr) {
        throw CompletenessError("l2_surface: missing record for block " +
                                std::to_string(b) + " near step " +
                                std::to_string(t));
      }
      surface(t, b - 1) = (x->values - y->values).norm();
    }
  }
  return surface;
}

MatrixR cosine_matrix(const FeatureLog& log, int block_index) {
  const int steps = log.step_count();
  std::vector<const FeatureRecord*> rows;
  for (int t = 0; t < steps; ++t) {
    const FeatureRecord* r = log.find(t, block_index);
    if (r == nullptr) {
      throw CompletenessError("cosine_matrix: missing block " +
                              std::to_string(block_index) + " at step " +
                              std::to_string(t));
    }
    rows.push_back(r);
  }
  std::vector<Real> norms;
  for (const auto* r : rows) norms.push_back(r->values.norm());
  MatrixR cos(steps, steps);
  for (int a = 0; a < steps; ++a) {
    cos(a, a) = 1.0;
    for (int b = a + 1; b < steps; ++b) {
      Real v = 0;
      if (norms[a] > 0 && norms[b] > 0) {
        const Real dot = rows[a]->values.cwiseProduct(rows[b]->values).sum();
        v = std::clamp(dot / (norms[a] * norms[b]), -1.0, 1.0);
      }
      cos(a, b) = v;
      cos(b, a) = v;
    }
  }
  return cos;
}

MatrixR PcaResult::reconstruct() const {
  MatrixR x = projection * components.transpose();
  x.rowwise() += mean.transpose();
  return x;
}

Real PcaResult::captured_variance_fraction() const {
  if (total_variance <= 0) return 0;
  return eigenvalues.sum() / total_variance;
}

PcaResult pca_project(const MatrixR& features, int k) {
  const Index T = features.rows(), d = features.cols();
  if (k < 1 || k > std::min(T, d)) {
    throw ConfigError("pca_project: need 1 <= k <= min(tokens, width)");
  }
  PcaResult out;
  out.mean = features.colwise().mean().transpose();
  const MatrixR centered = features.rowwise() - out.mean.transpose();
  const Real denom = T > 1 ? static_cast<Real>(T - 1) : 1.0;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("pca_project: eigendecomposition failed");
  }
  const Eigen::VectorXd& evals = solver.eigenvalues();  // ascending
  const Eigen::MatrixXd& evecs = solver.eigenvectors();
  out.total_variance = std::max(0.0, evals.sum());
  const Real largest = std::max(evals(d - 1), 0.0);
  const Real tol = 1e-12 * std::max(largest, 1e-300);

  int effective = 0;
  for (int i = 0; i < k; ++i) {
    if (evals(d - 1 - i) > tol) ++effective;
  }
  if (effective < k) {
    out.warning = "pca_project: covariance rank " + std::to_string(effective) +
                  " < requested k " + std::to_string(k);
  }
  out.effective_k = effective;
  out.components.resize(d, effective);
  out.eigenvalues.resize(effective);
  for (int i = 0; i < effective; ++i) {
    Eigen::VectorXd v = evecs.col(d - 1 - i);
    Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    out.components.col(i) = v;
    out.eigenvalues(i) = evals(d - 1 - i);
  }
  out.projection = centered * out.components;
  return out;
}

}  // namespace blockdance
