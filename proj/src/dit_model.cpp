#include "blockdance/dit/model.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "blockdance/numeric/rng.hpp"

namespace blockdance {

void DitConfig::validate() const {
  if (depth < 2) throw ConfigError("DitConfig: depth must be >= 2");
  if (width < 1 || heads < 1 || width % heads != 0) {
    throw ConfigError("DitConfig: width must be a positive multiple of heads");
  }
  if (tokens < 1) throw ConfigError("DitConfig: tokens must be >= 1");
  if (cond_dim < 2) throw ConfigError("DitConfig: cond_dim must be >= 2");
  if (in_channels < 1) throw ConfigError("DitConfig: in_channels must be >= 1");
  if (mlp_ratio < 1) throw ConfigError("DitConfig: mlp_ratio must be >= 1");
}

DitConfig DitConfig::toy() { return DitConfig{}; }

DitConfig DitConfig::paper_shaped() {
  DitConfig cfg;
  cfg.depth = 28;
  cfg.width = 1152;
  cfg.tokens = 4096;
  cfg.heads = 16;
  cfg.cond_dim = 1152;
  cfg.in_channels = 16;
  return cfg;
}

Conditioning make_conditioning(const DitConfig& cfg, Real timestep,
                               const VectorR& context) {
  if (context.size() != cfg.cond_dim) {
    throw DimensionError("conditioning: context width != cond_dim");
  }
  Conditioning c;
  c.timestep = timestep;
  c.timestep_embedding = sinusoidal_embedding<Real>(timestep, cfg.cond_dim);
  c.context_embedding = context;
  return c;
}

DitWeights init_weights(const DitConfig& cfg) {
  cfg.validate();
  const Index d = cfg.width, din = cfg.in_channels, T = cfg.tokens,
              cd = cfg.cond_dim, hidden = cfg.mlp_ratio * cfg.width;
  RngStream rng(cfg.seed, /*stream_id=*/0x5EED0D17ULL);
  auto normal = [&](Index rows, Index cols, Real std) -> MatrixR {
    return gaussian(rng, rows, cols) * std;
  };
  auto zeros = [](Index n) -> VectorR { return VectorR::Zero(n); };
  auto inv_sqrt = [](Index n) { return 1.0 / std::sqrt(static_cast<Real>(n)); };

  DitWeights w;
  w.embed_w = normal(din, d, inv_sqrt(din));
  w.embed_b = zeros(d);
  w.pos_embed = normal(T, d, 0.5);
  w.t_fc1_w = normal(cd, cd, inv_sqrt(cd));
  w.t_fc1_b = zeros(cd);
  w.t_fc2_w = normal(cd, cd, inv_sqrt(cd));
  w.t_fc2_b = zeros(cd);
  w.blocks.resize(static_cast<std::size_t>(cfg.depth));
  for (auto& b : w.blocks) {
    b.ada_w = normal(cd, 6 * d, 0.5 * inv_sqrt(cd));
    b.ada_b = zeros(6 * d);
    b.qkv_w = normal(d, 3 * d, inv_sqrt(d));
    b.qkv_b = zeros(3 * d);
    b.proj_w = normal(d, d, inv_sqrt(d));
    b.proj_b = zeros(d);
    b.fc1_w = normal(d, hidden, inv_sqrt(d));
    b.fc1_b = zeros(hidden);
    b.fc2_w = normal(hidden, d, inv_sqrt(hidden));
    b.fc2_b = zeros(d);
  }
  w.final_ada_w = normal(cd, 2 * d, 0.5 * inv_sqrt(cd));
  w.final_ada_b = zeros(2 * d);
  w.head_w = normal(d, din, inv_sqrt(d));
  w.head_b = zeros(din);
  return w;
}

DitModel::DitModel(const DitConfig& cfg) : DitModel(cfg, init_weights(cfg)) {}

DitModel::DitModel(const DitConfig& cfg, DitWeights weights)
    : cfg_(cfg), weights_(std::move(weights)) {
  cfg_.validate();
  if (weights_.blocks.size() != static_cast<std::size_t>(cfg_.depth)) {
    throw ConfigError("DitModel: block count does not match depth");
  }
}

VectorR DitModel::condition_vector(const Conditioning& cond,
                                   MacCounter* counter) const {
  if (cond.timestep_embedding.size() != cfg_.cond_dim ||
      cond.context_embedding.size() != cfg_.cond_dim) {
    throw DimensionError("conditioning width != cond_dim");
  }
  VectorR h = linear(cond.timestep_embedding, weights_.t_fc1_w,
                     weights_.t_fc1_b, counter);
  h = silu(h);
  h = linear(h, weights_.t_fc2_w, weights_.t_fc2_b, counter);
  return h + cond.context_embedding;
}

MatrixR DitModel::embed(const MatrixR& z_t, MacCounter* counter) const {
  if (z_t.rows() != cfg_.tokens || z_t.cols() != cfg_.in_channels) {
    throw DimensionError("embed: latent must be tokens x in_channels");
  }
  return linear(z_t, weights_.embed_w, weights_.embed_b, counter) +
         weights_.pos_embed;
}

namespace {

// LN(x) * (1 + scale) + shift, column-wise modulation.
MatrixR modulate(const MatrixR& x, const VectorR& shift, const VectorR& scale) {
  MatrixR y = layernorm<Real>(x, 1e-6);
  for (Index r = 0; r < y.rows(); ++r) {
    for (Index j = 0; j < y.cols(); ++j) {
      y(r, j) = y(r, j) * (1.0 + scale(j)) + shift(j);
    }
  }
  return y;
}

MatrixR self_attention(const MatrixR& x, const BlockWeights& b, int heads,
                       MacCounter* counter) {
  const Index T = x.rows(), d = x.cols(), dh = d / heads;
  const MatrixR qkv = linear(x, b.qkv_w, b.qkv_b, counter);
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));
  MatrixR out(T, d);
  for (int h = 0; h < heads; ++h) {
    const MatrixR q = qkv.middleCols(h * dh, dh);
    const MatrixR k = qkv.middleCols(d + h * dh, dh);
    const MatrixR v = qkv.middleCols(2 * d + h * dh, dh);
    const MatrixR scores = matmul_transposed(q, k, counter) * scale;
    const MatrixR probs = softmax_rows(scores);
    out.middleCols(h * dh, dh) = matmul(probs, v, counter);
  }
  return linear(out, b.proj_w, b.proj_b, counter);
}

}  // namespace

MatrixR DitModel::run_single_block(int block_index, const MatrixR& x,
                                   const VectorR& cond_vec,
                                   MacCounter* counter) const {
  if (block_index < 1 || block_index > cfg_.depth) {
    throw BlockIndexError("block index " + std::to_string(block_index) +
                          " outside [1, " + std::to_string(cfg_.depth) + "]");
  }
  const BlockWeights& b = weights_.blocks[static_cast<std::size_t>(block_index - 1)];
  const Index d = cfg_.width;
  const VectorR mod = linear(VectorR(silu(cond_vec)), b.ada_w, b.ada_b, counter);
  const VectorR shift1 = mod.segment(0, d), scale1 = mod.segment(d, d),
                gate1 = mod.segment(2 * d, d), shift2 = mod.segment(3 * d, d),
                scale2 = mod.segment(4 * d, d), gate2 = mod.segment(5 * d, d);

  MatrixR h = x;
  const MatrixR attn =
      self_attention(modulate(h, shift1, scale1), b, cfg_.heads, counter);
  h += attn * gate1.asDiagonal();

  MatrixR mlp = linear(modulate(h, shift2, scale2), b.fc1_w, b.fc1_b, counter);
  mlp = gelu(mlp);
  mlp = linear(mlp, b.fc2_w, b.fc2_b, counter);
  h += mlp * gate2.asDiagonal();
  return h;
}

MatrixR DitModel::output_head(const MatrixR& x, const VectorR& cond_vec,
                              MacCounter* counter) const {
  const Index d = cfg_.width;
  const VectorR mod = linear(VectorR(silu(cond_vec)), weights_.final_ada_w,
                             weights_.final_ada_b, counter);
  const MatrixR h = modulate(x, mod.segment(0, d), mod.segment(d, d));
  return linear(h, weights_.head_w, weights_.head_b, counter);
}

ForwardResult DitModel::forward_full(const MatrixR& z_t,
                                     const Conditioning& cond,
                                     const std::set<int>& taps) const {
  for (int tap : taps) {
    if (tap < 1 || tap > cfg_.depth) {
      throw BlockIndexError("tap index " + std::to_string(tap) +
                            " outside [1, " + std::to_string(cfg_.depth) + "]");
    }
  }
  MacCounter counter;
  ForwardResult result;
  const VectorR c = condition_vector(cond, &counter);
  MatrixR x = embed(z_t, &counter);
  for (int i = 1; i <= cfg_.depth; ++i) {
    x = run_single_block(i, x, c, &counter);
    ++result.blocks_evaluated;
    if (taps.count(i) != 0) {
      result.tapped.push_back(BlockFeature{i, cond.timestep, x});
    }
  }
  result.eps = output_head(x, c, &counter);
  result.macs = counter.macs;
  return result;
}

ForwardResult DitModel::forward_from_block(const BlockFeature& cached,
                                           const Conditioning& cond) const {
  if (cached.block_index < 1 || cached.block_index > cfg_.depth - 1) {
    throw BlockIndexError("resume block " + std::to_string(cached.block_index) +
                          " outside [1, " + std::to_string(cfg_.depth - 1) +
                          "]");
  }
  if (cached.values.rows() != cfg_.tokens || cached.values.cols() != cfg_.width) {
    throw DimensionError("cached feature must be tokens x width");
  }
  MacCounter counter;
  ForwardResult result;
  const VectorR c = condition_vector(cond, &counter);
  MatrixR x = cached.values;
  for (int i = cached.block_index + 1; i <= cfg_.depth; ++i) {
    x = run_single_block(i, x, c, &counter);
    ++result.blocks_evaluated;
  }
  result.eps = output_head(x, c, &counter);
  result.macs = counter.macs;
  return result;
}

std::uint64_t DitModel::weight_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for_each_tensor(weights_, [&](const std::string& name, const auto& t) {
    h = fnv1a64(name.data(), name.size(), h);
    h = fnv1a64(t.data(), static_cast<std::size_t>(t.size()) * sizeof(Real), h);
  });
  return h;
}

std::size_t DitModel::tensor_count() const {
  std::size_t n = 0;
  for_each_tensor(weights_, [&](const std::string&, const auto&) { ++n; });
  return n;
}

MacBreakdown mac_breakdown(const DitConfig& cfg) {
  const std::uint64_t T = static_cast<std::uint64_t>(cfg.tokens);
  const std::uint64_t d = static_cast<std::uint64_t>(cfg.width);
  const std::uint64_t din = static_cast<std::uint64_t>(cfg.in_channels);
  const std::uint64_t cd = static_cast<std::uint64_t>(cfg.cond_dim);
  const std::uint64_t hidden = static_cast<std::uint64_t>(cfg.mlp_ratio) * d;
  MacBreakdown m;
  m.embed = T * din * d;
  m.conditioning = 2 * cd * cd;
  m.per_block = cd * 6 * d            // adaLN modulation
                + T * d * 3 * d       // qkv
                + 2 * T * T * d       // scores and weighted values
                + T * d * d           // output projection
                + 2 * T * d * hidden; // mlp
  m.final_layer = cd * 2 * d + T * d * din;
  return m;
}

std::uint64_t mac_count(const DitConfig& cfg, int blocks_executed,
                        ForwardEntry entry) {
  if (blocks_executed < 0 || blocks_executed > cfg.depth) {
    throw BlockIndexError("blocks_executed outside [0, depth]");
  }
  const MacBreakdown m = mac_breakdown(cfg);
  std::uint64_t total = m.conditioning + m.final_layer +
                        static_cast<std::uint64_t>(blocks_executed) * m.per_block;
  if (entry == ForwardEntry::kInput) total += m.embed;
  return total;
}

namespace {

nlohmann::json config_json(const DitConfig& c) {
  return {{"depth", c.depth},       {"width", c.width},
          {"tokens", c.tokens},     {"heads", c.heads},
          {"cond_dim", c.cond_dim}, {"in_channels", c.in_channels},
          {"mlp_ratio", c.mlp_ratio}, {"seed", c.seed}};
}

}  // namespace

void save_checkpoint(const DitModel& model, const std::filesystem::path& stem) {
  const auto bin = std::filesystem::path(stem).concat(".bin");
  const auto manifest_path = std::filesystem::path(stem).concat(".json");
  std::ofstream out(bin, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + bin.string());
  nlohmann::json manifest;
  manifest["format"] = "blockdance-dit-checkpoint";
  manifest["version"] = 1;
  manifest["config"] = config_json(model.config());
  manifest["tensors"] = nlohmann::json::array();
  for_each_tensor(model.weights(), [&](const std::string& name, const auto& t) {
    TensorRecord r = to_record(t);
    write_tensor(out, r);
    manifest["tensors"].push_back({{"name", name}, {"shape", r.shape}});
  });
  std::ofstream mf(manifest_path, std::ios::trunc);
  if (!mf) throw IoError("cannot open for writing: " + manifest_path.string());
  mf << manifest.dump(2) << "\n";
}

DitModel load_checkpoint(const std::filesystem::path& stem) {
  const auto bin = std::filesystem::path(stem).concat(".bin");
  const auto manifest_path = std::filesystem::path(stem).concat(".json");
  std::ifstream mf(manifest_path);
  if (!mf) throw IoError("cannot open for reading: " + manifest_path.string());
  const nlohmann::json manifest = nlohmann::json::parse(mf);
  const auto& c = manifest.at("config");
  DitConfig cfg;
  cfg.depth = c.at("depth");
  cfg.width = c.at("width");
  cfg.tokens = c.at("tokens");
  cfg.heads = c.at("heads");
  cfg.cond_dim = c.at("cond_dim");
  cfg.in_channels = c.at("in_channels");
  cfg.mlp_ratio = c.at("mlp_ratio");
  cfg.seed = c.at("seed");
  cfg.validate();

  DitWeights w;
  w.blocks.resize(static_cast<std::size_t>(cfg.depth));
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + bin.string());
  std::size_t i = 0;
  const auto& entries = manifest.at("tensors");
  for_each_tensor(w, [&](const std::string& name, auto& t) {
    if (i >= entries.size() || entries[i].at("name") != name) {
      throw IoError("checkpoint manifest out of order at " + name);
    }
    const TensorRecord r = read_tensor(in);
    const MatrixR m = record_to_matrix(r);
    using T = std::decay_t<decltype(t)>;
    if constexpr (std::is_same_v<T, VectorR>) {
      t = Eigen::Map<const VectorR>(m.data(), m.size());
    } else {
      t = m;
    }
    ++i;
  });
  return DitModel(cfg, std::move(w));
}

}  // namespace blockdance
