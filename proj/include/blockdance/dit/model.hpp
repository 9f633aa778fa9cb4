#ifndef BLOCKDANCE_DIT_MODEL_HPP_
#define BLOCKDANCE_DIT_MODEL_HPP_

#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "blockdance/numeric/ops.hpp"
#include "blockdance/numeric/tensor.hpp"

namespace blockdance {

struct BlockIndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct DitConfig {
  int depth = 8;         // L, number of stacked blocks
  int width = 64;        // d
  int tokens = 16;       // T
  int heads = 4;
  int cond_dim = 64;
  int in_channels = 4;   // d_in, latent channels per token
  int mlp_ratio = 4;
  std::uint64_t seed = 0;

  void validate() const;

  /// Desk-scale profile used by tests and the default CLI runs.
  static DitConfig toy();
  /// 28 blocks, PixArt-like width and token count; used for MAC ratios.
  static DitConfig paper_shaped();

  bool operator==(const DitConfig&) const = default;
};

/// Timestep plus a stand-in for the class/text embedding.
struct Conditioning {
  Real timestep = 0;
  VectorR timestep_embedding;  // sinusoidal, pure function of timestep
  VectorR context_embedding;
};

Conditioning make_conditioning(const DitConfig& cfg, Real timestep,
                               const VectorR& context);

struct BlockFeature {
  int block_index = 0;  // 1-based; the OUTPUT of this block
  Real step = 0;        // train timestep the feature was computed at
  MatrixR values;       // tokens x width
};

struct BlockWeights {
  MatrixR ada_w;  // cond_dim x 6d: shift1 scale1 gate1 shift2 scale2 gate2
  VectorR ada_b;
  MatrixR qkv_w;  // d x 3d
  VectorR qkv_b;
  MatrixR proj_w;
  VectorR proj_b;
  MatrixR fc1_w;  // d x (mlp_ratio d)
  VectorR fc1_b;
  MatrixR fc2_w;
  VectorR fc2_b;
};

struct DitWeights {
  MatrixR embed_w;  // d_in x d
  VectorR embed_b;
  MatrixR pos_embed;  // T x d
  MatrixR t_fc1_w;
  VectorR t_fc1_b;
  MatrixR t_fc2_w;
  VectorR t_fc2_b;
  MatrixR final_ada_w;  // cond_dim x 2d: shift scale
  VectorR final_ada_b;
  MatrixR head_w;  // d x d_in
  VectorR head_b;
  std::vector<BlockWeights> blocks;
};

inline constexpr int kTensorsPerBlock = 10;
inline constexpr int kNonBlockTensors = 11;

/// Visits every weight tensor with a stable name, in checkpoint order.
template <typename Weights, typename Fn>
void for_each_tensor(Weights& w, Fn&& fn) {
  fn("embed.w", w.embed_w);
  fn("embed.b", w.embed_b);
  fn("pos_embed", w.pos_embed);
  fn("t_embed.fc1.w", w.t_fc1_w);
  fn("t_embed.fc1.b", w.t_fc1_b);
  fn("t_embed.fc2.w", w.t_fc2_w);
  fn("t_embed.fc2.b", w.t_fc2_b);
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    auto& b = w.blocks[i];
    const std::string p = "blocks." + std::to_string(i + 1) + ".";
    fn(p + "ada.w", b.ada_w);
    fn(p + "ada.b", b.ada_b);
    fn(p + "qkv.w", b.qkv_w);
    fn(p + "qkv.b", b.qkv_b);
    fn(p + "proj.w", b.proj_w);
    fn(p + "proj.b", b.proj_b);
    fn(p + "fc1.w", b.fc1_w);
    fn(p + "fc1.b", b.fc1_b);
    fn(p + "fc2.w", b.fc2_w);
    fn(p + "fc2.b", b.fc2_b);
  }
  fn("final.ada.w", w.final_ada_w);
  fn("final.ada.b", w.final_ada_b);
  fn("head.w", w.head_w);
  fn("head.b", w.head_b);
}

struct ForwardResult {
  MatrixR eps;
  std::vector<BlockFeature> tapped;
  int blocks_evaluated = 0;
  std::uint64_t macs = 0;  // instrumented count for this call
};

class DitModel {
 public:
  explicit DitModel(const DitConfig& cfg);
  DitModel(const DitConfig& cfg, DitWeights weights);

  const DitConfig& config() const { return cfg_; }
  const DitWeights& weights() const { return weights_; }

  /// Conditioning vector fed to every adaLN modulation.
  VectorR condition_vector(const Conditioning& cond,
                           MacCounter* counter = nullptr) const;

  MatrixR embed(const MatrixR& z_t, MacCounter* counter = nullptr) const;

  /// One block, 1-based index, on residual-stream input x.
  MatrixR run_single_block(int block_index, const MatrixR& x,
                           const VectorR& cond_vec,
                           MacCounter* counter = nullptr) const;

  MatrixR output_head(const MatrixR& x, const VectorR& cond_vec,
                      MacCounter* counter = nullptr) const;

  /// Runs blocks 1..L. Taps are 1-based block indices whose outputs are
  /// returned in ascending order.
  ForwardResult forward_full(const MatrixR& z_t, const Conditioning& cond,
                             const std::set<int>& taps = {}) const;

  /// Feeds `cached` into block cached.block_index + 1 and runs to the head
  /// under `cond`. Blocks 1..cached.block_index are not evaluated.
  ForwardResult forward_from_block(const BlockFeature& cached,
                                   const Conditioning& cond) const;

  std::uint64_t weight_checksum() const;
  std::size_t tensor_count() const;

 private:
  DitConfig cfg_;
  DitWeights weights_;
};

DitWeights init_weights(const DitConfig& cfg);

/// Per-component multiply-accumulate counts of one forward pass.
struct MacBreakdown {
  std::uint64_t embed = 0;         // patch/token embedding
  std::uint64_t conditioning = 0;  // timestep MLP
  std::uint64_t per_block = 0;
  std::uint64_t final_layer = 0;   // final modulation + head
};

MacBreakdown mac_breakdown(const DitConfig& cfg);

/// MACs of a pass executing `blocks_executed` blocks. A full pass enters at
/// the token embedding; a pass resumed from a cached feature does not.
enum class ForwardEntry { kInput, kCachedFeature };

std::uint64_t mac_count(const DitConfig& cfg, int blocks_executed,
                        ForwardEntry entry = ForwardEntry::kInput);

// Checkpoint: `<stem>.bin` holds the tensors back to back in dump format,
// `<stem>.json` lists names, shapes and the model config.
void save_checkpoint(const DitModel& model, const std::filesystem::path& stem);
DitModel load_checkpoint(const std::filesystem::path& stem);

}  // namespace blockdance

#endif  // BLOCKDANCE_DIT_MODEL_HPP_
