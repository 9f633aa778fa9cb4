#ifndef BLOCKDANCE_ADA_DECISION_NET_HPP_
#define BLOCKDANCE_ADA_DECISION_NET_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "blockdance/numeric/tensor.hpp"

namespace blockdance {

struct DecisionNetConfig {
  int tokens = 16;       // latent tokens T
  int in_channels = 4;   // latent channels
  int cond_dim = 64;
  int pooled_tokens = 4; // T must be divisible by this
  int width = 32;
  int heads = 2;
  int blocks = 3;
  int mlp_ratio = 2;
  int head_hidden = 64;
  int actions = 18;      // s - rho
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const DecisionNetConfig&) const = default;
};

struct DecisionBlockParams {
  MatrixR qkv_w;
  VectorR qkv_b;
  MatrixR proj_w;
  VectorR proj_b;
  MatrixR fc1_w;
  VectorR fc1_b;
  MatrixR fc2_w;
  VectorR fc2_b;
};

/// Weights of the decision network; also used as the gradient container.
struct DecisionParams {
  MatrixR embed_w;  // in_channels x width
  VectorR embed_b;
  MatrixR ctx_w;    // cond_dim x width
  VectorR ctx_b;
  MatrixR pos;      // (pooled_tokens + 1) x width
  std::vector<DecisionBlockParams> blocks;
  MatrixR head1_w;  // (width + cond_dim) x head_hidden
  VectorR head1_b;
  MatrixR head2_w;  // head_hidden x actions
  VectorR head2_b;

  DecisionParams zeros_like() const;
  std::size_t parameter_count() const;
};

template <typename Params, typename Fn>
void for_each_param(Params& p, Fn&& fn) {
  fn("embed.w", p.embed_w);
  fn("embed.b", p.embed_b);
  fn("ctx.w", p.ctx_w);
  fn("ctx.b", p.ctx_b);
  fn("pos", p.pos);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "blocks." + std::to_string(i + 1) + ".";
    fn(pre + "qkv.w", b.qkv_w);
    fn(pre + "qkv.b", b.qkv_b);
    fn(pre + "proj.w", b.proj_w);
    fn(pre + "proj.b", b.proj_b);
    fn(pre + "fc1.w", b.fc1_w);
    fn(pre + "fc1.b", b.fc1_b);
    fn(pre + "fc2.w", b.fc2_w);
    fn(pre + "fc2.b", b.fc2_b);
  }
  fn("head1.w", p.head1_w);
  fn("head1.b", p.head1_b);
  fn("head2.w", p.head2_w);
  fn("head2.b", p.head2_b);
}

/// All weights in for_each_param order, and the inverse.
VectorR flatten(const DecisionParams& p);
void assign_flat(DecisionParams& p, const VectorR& flat);

/// Intermediates kept by forward() for the reverse pass.
struct DecisionTape {
  MatrixR pooled;
  VectorR context;
  struct Block {
    MatrixR input, ln1, qkv;
    std::vector<MatrixR> probs;  // per head
    MatrixR attn_concat, mid, ln2, fc1_pre, fc1_act;
  };
  std::vector<Block> blocks;
  MatrixR final_hidden, final_ln;
  VectorR head_in, head_act;
  VectorR logits;
};

/// Token pooling -> embedding (+ a context token) -> transformer blocks ->
/// mean-pooled tokens concatenated with the context -> two-layer head.
class DecisionNet {
 public:
  explicit DecisionNet(const DecisionNetConfig& cfg);
  DecisionNet(const DecisionNetConfig& cfg, DecisionParams params);

  const DecisionNetConfig& config() const { return cfg_; }
  const DecisionParams& params() const { return params_; }
  DecisionParams& mutable_params() { return params_; }

  VectorR logits(const MatrixR& z_rho, const VectorR& context,
                 DecisionTape* tape = nullptr) const;

  /// Gradient of sum_t dlogits_t * logit_t w.r.t. every weight, added to
  /// `grad`.
  void backward(const DecisionTape& tape, const VectorR& dlogits,
                DecisionParams& grad) const;

  std::uint64_t checksum() const;

 private:
  DecisionNetConfig cfg_;
  DecisionParams params_;
};

DecisionParams init_decision_params(const DecisionNetConfig& cfg);

/// m = sigmoid(f_d(z_rho, c)).
VectorR decide(const DecisionNet& net, const MatrixR& z_rho,
               const VectorR& context);

}  // namespace blockdance

#endif  // BLOCKDANCE_ADA_DECISION_NET_HPP_
