#include "blockdance/ada/decision_net.hpp"

#include <cmath>

#include "blockdance/numeric/ops.hpp"
#include "blockdance/numeric/rng.hpp"

namespace blockdance {

namespace {

constexpr Real kLnEps = 1e-5;

// Reverse pass of an affine-free layernorm given its output y and input x.
MatrixR layernorm_backward(const MatrixR& x, const MatrixR& y,
                           const MatrixR& dy) {
  const Index d = x.cols();
  MatrixR dx(x.rows(), d);
  for (Index r = 0; r < x.rows(); ++r) {
    const Real mean = x.row(r).mean();
    const Real var = (x.row(r).array() - mean).square().mean();
    const Real inv = var > 0 ? 1.0 / std::sqrt(var + kLnEps) : 0.0;
    const Real mean_dy = dy.row(r).mean();
    const Real mean_dy_y = dy.row(r).cwiseProduct(y.row(r)).mean();
    for (Index j = 0; j < d; ++j) {
      dx(r, j) = inv * (dy(r, j) - mean_dy - y(r, j) * mean_dy_y);
    }
  }
  return dx;
}

void add_linear_grad(const MatrixR& x, const MatrixR& dy, MatrixR& dw,
                     VectorR& db) {
  dw += x.transpose() * dy;
  db += dy.colwise().sum().transpose();
}

}  // namespace

void DecisionNetConfig::validate() const {
  if (tokens < 1 || in_channels < 1 || cond_dim < 1) {
    throw ConfigError("decision net: tokens, channels, cond_dim must be >= 1");
  }
  if (pooled_tokens < 1 || tokens % pooled_tokens != 0) {
    throw ConfigError("decision net: tokens must be divisible by pooled_tokens");
  }
  if (width < 1 || heads < 1 || width % heads != 0) {
    throw ConfigError("decision net: width must be a multiple of heads");
  }
  if (blocks < 0 || mlp_ratio < 1 || head_hidden < 1) {
    throw ConfigError("decision net: invalid block/mlp/head sizes");
  }
  if (actions < 1) throw ConfigError("decision net: actions must be >= 1");
}

DecisionParams DecisionParams::zeros_like() const {
  DecisionParams z = *this;
  for_each_param(z, [](const std::string&, auto& t) { t.setZero(); });
  return z;
}

std::size_t DecisionParams::parameter_count() const {
  std::size_t n = 0;
  for_each_param(*this, [&](const std::string&, const auto& t) {
    n += static_cast<std::size_t>(t.size());
  });
  return n;
}

VectorR flatten(const DecisionParams& p) {
  VectorR flat(static_cast<Index>(p.parameter_count()));
  Index off = 0;
  for_each_param(p, [&](const std::string&, const auto& t) {
    flat.segment(off, t.size()) = Eigen::Map<const VectorR>(t.data(), t.size());
    off += t.size();
  });
  return flat;
}

void assign_flat(DecisionParams& p, const VectorR& flat) {
  if (flat.size() != static_cast<Index>(p.parameter_count())) {
    throw DimensionError("assign_flat: size mismatch");
  }
  Index off = 0;
  for_each_param(p, [&](const std::string&, auto& t) {
    Eigen::Map<VectorR>(t.data(), t.size()) = flat.segment(off, t.size());
    off += t.size();
  });
}

DecisionParams init_decision_params(const DecisionNetConfig& cfg) {
  cfg.validate();
  RngStream rng(cfg.seed, /*stream_id=*/0xADA0ULL);
  auto normal = [&](Index r, Index c, Real std) -> MatrixR {
    return gaussian(rng, r, c) * std;
  };
  auto inv_sqrt = [](Index n) { return 1.0 / std::sqrt(static_cast<Real>(n)); };
  const Index w = cfg.width, hidden = cfg.mlp_ratio * cfg.width;

  DecisionParams p;
  p.embed_w = normal(cfg.in_channels, w, inv_sqrt(cfg.in_channels));
  p.embed_b = VectorR::Zero(w);
  p.ctx_w = normal(cfg.cond_dim, w, inv_sqrt(cfg.cond_dim));
  p.ctx_b = VectorR::Zero(w);
  p.pos = normal(cfg.pooled_tokens + 1, w, 0.1);
  p.blocks.resize(static_cast<std::size_t>(cfg.blocks));
  for (auto& b : p.blocks) {
    b.qkv_w = normal(w, 3 * w, inv_sqrt(w));
    b.qkv_b = VectorR::Zero(3 * w);
    b.proj_w = normal(w, w, 0.5 * inv_sqrt(w));
    b.proj_b = VectorR::Zero(w);
    b.fc1_w = normal(w, hidden, inv_sqrt(w));
    b.fc1_b = VectorR::Zero(hidden);
    b.fc2_w = normal(hidden, w, 0.5 * inv_sqrt(hidden));
    b.fc2_b = VectorR::Zero(w);
  }
  p.head1_w = normal(w + cfg.cond_dim, cfg.head_hidden,
                     inv_sqrt(w + cfg.cond_dim));
  p.head1_b = VectorR::Zero(cfg.head_hidden);
  // Zero output layer: the initial policy is m = 0.5 everywhere.
  p.head2_w = MatrixR::Zero(cfg.head_hidden, cfg.actions);
  p.head2_b = VectorR::Zero(cfg.actions);
  return p;
}

DecisionNet::DecisionNet(const DecisionNetConfig& cfg)
    : DecisionNet(cfg, init_decision_params(cfg)) {}

DecisionNet::DecisionNet(const DecisionNetConfig& cfg, DecisionParams params)
    : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  if (params_.blocks.size() != static_cast<std::size_t>(cfg_.blocks) ||
      params_.head2_b.size() != cfg_.actions ||
      params_.embed_w.rows() != cfg_.in_channels ||
      params_.ctx_w.rows() != cfg_.cond_dim) {
    throw ConfigError("decision net: parameters do not match config");
  }
}

VectorR DecisionNet::logits(const MatrixR& z_rho, const VectorR& context,
                            DecisionTape* tape) const {
  if (z_rho.rows() != cfg_.tokens || z_rho.cols() != cfg_.in_channels) {
    throw ConfigError("decide: latent must be tokens x in_channels");
  }
  if (context.size() != cfg_.cond_dim) {
    throw ConfigError("decide: context width != cond_dim");
  }
  const Index P = cfg_.pooled_tokens, group = cfg_.tokens / P;
  const Index w = cfg_.width, dh = w / cfg_.heads;
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));

  MatrixR pooled(P, cfg_.in_channels);
  for (Index p = 0; p < P; ++p) {
    pooled.row(p) = z_rho.middleRows(p * group, group).colwise().mean();
  }
  MatrixR h(P + 1, w);
  h.topRows(P) = linear(pooled, params_.embed_w, params_.embed_b);
  h.row(P) = linear(context, params_.ctx_w, params_.ctx_b).transpose();
  h += params_.pos;

  DecisionTape local;
  DecisionTape& tp = tape != nullptr ? *tape : local;
  tp.pooled = pooled;
  tp.context = context;
  tp.blocks.clear();
  for (const auto& b : params_.blocks) {
    DecisionTape::Block bt;
    bt.input = h;
    bt.ln1 = layernorm<Real>(h, kLnEps);
    bt.qkv = linear(bt.ln1, b.qkv_w, b.qkv_b);
    bt.attn_concat.resize(P + 1, w);
    for (int hd = 0; hd < cfg_.heads; ++hd) {
      const MatrixR q = bt.qkv.middleCols(hd * dh, dh);
      const MatrixR k = bt.qkv.middleCols(w + hd * dh, dh);
      const MatrixR v = bt.qkv.middleCols(2 * w + hd * dh, dh);
      MatrixR probs = softmax_rows<Real>(matmul_transposed(q, k) * scale);
      bt.attn_concat.middleCols(hd * dh, dh) = matmul(probs, v);
      bt.probs.push_back(std::move(probs));
    }
    bt.mid = h + linear(bt.attn_concat, b.proj_w, b.proj_b);
    bt.ln2 = layernorm<Real>(bt.mid, kLnEps);
    bt.fc1_pre = linear(bt.ln2, b.fc1_w, b.fc1_b);
    bt.fc1_act = gelu(bt.fc1_pre);
    h = bt.mid + linear(bt.fc1_act, b.fc2_w, b.fc2_b);
    tp.blocks.push_back(std::move(bt));
  }
  tp.final_hidden = h;
  tp.final_ln = layernorm<Real>(h, kLnEps);
  tp.head_in.resize(w + cfg_.cond_dim);
  tp.head_in.head(w) = tp.final_ln.colwise().mean().transpose();
  tp.head_in.tail(cfg_.cond_dim) = context;
  tp.head_act = linear(tp.head_in, params_.head1_w, params_.head1_b)
                    .unaryExpr([](Real x) { return std::tanh(x); });
  tp.logits = linear(tp.head_act, params_.head2_w, params_.head2_b);
  return tp.logits;
}

void DecisionNet::backward(const DecisionTape& tape, const VectorR& dlogits,
                           DecisionParams& grad) const {
  if (dlogits.size() != cfg_.actions) {
    throw DimensionError("backward: dlogits length != actions");
  }
  const Index P = cfg_.pooled_tokens, w = cfg_.width, dh = w / cfg_.heads;
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(dh));

  grad.head2_w += tape.head_act * dlogits.transpose();
  grad.head2_b += dlogits;
  const VectorR dact = params_.head2_w * dlogits;
  const VectorR dpre =
      dact.cwiseProduct((1.0 - tape.head_act.array().square()).matrix());
  grad.head1_w += tape.head_in * dpre.transpose();
  grad.head1_b += dpre;
  const VectorR dhead_in = params_.head1_w * dpre;

  MatrixR dln(P + 1, w);
  for (Index r = 0; r <= P; ++r) {
    dln.row(r) = dhead_in.head(w).transpose() / static_cast<Real>(P + 1);
  }
  MatrixR dh_ = layernorm_backward(tape.final_hidden, tape.final_ln, dln);

  for (std::size_t bi = params_.blocks.size(); bi-- > 0;) {
    const auto& b = params_.blocks[bi];
    const auto& bt = tape.blocks[bi];
    auto& g = grad.blocks[bi];

    // h = mid + fc2(gelu(fc1(ln2(mid))))
    add_linear_grad(bt.fc1_act, dh_, g.fc2_w, g.fc2_b);
    MatrixR dact_mlp = dh_ * b.fc2_w.transpose();
    MatrixR dpre_mlp = dact_mlp.cwiseProduct(bt.fc1_pre.unaryExpr(
        [](Real x) { return gelu_derivative(x); }));
    add_linear_grad(bt.ln2, dpre_mlp, g.fc1_w, g.fc1_b);
    MatrixR dmid = dh_ + layernorm_backward(bt.mid, bt.ln2,
                                            dpre_mlp * b.fc1_w.transpose());

    // mid = input + proj(attention(ln1(input)))
    add_linear_grad(bt.attn_concat, dmid, g.proj_w, g.proj_b);
    const MatrixR dconcat = dmid * b.proj_w.transpose();
    MatrixR dqkv = MatrixR::Zero(P + 1, 3 * w);
    for (int hd = 0; hd < cfg_.heads; ++hd) {
      const MatrixR q = bt.qkv.middleCols(hd * dh, dh);
      const MatrixR k = bt.qkv.middleCols(w + hd * dh, dh);
      const MatrixR v = bt.qkv.middleCols(2 * w + hd * dh, dh);
      const MatrixR& probs = bt.probs[static_cast<std::size_t>(hd)];
      const MatrixR dout = dconcat.middleCols(hd * dh, dh);
      const MatrixR dprobs = dout * v.transpose();
      MatrixR dscores(probs.rows(), probs.cols());
      for (Index r = 0; r < probs.rows(); ++r) {
        const Real dot = dprobs.row(r).dot(probs.row(r));
        dscores.row(r) = probs.row(r).cwiseProduct(
            (dprobs.row(r).array() - dot).matrix());
      }
      dscores *= scale;
      dqkv.middleCols(hd * dh, dh) = dscores * k;
      dqkv.middleCols(w + hd * dh, dh) = dscores.transpose() * q;
      dqkv.middleCols(2 * w + hd * dh, dh) = probs.transpose() * dout;
    }
    add_linear_grad(bt.ln1, dqkv, g.qkv_w, g.qkv_b);
    dh_ = dmid + layernorm_backward(bt.input, bt.ln1,
                                    dqkv * b.qkv_w.transpose());
  }

  grad.pos += dh_;
  add_linear_grad(tape.pooled, dh_.topRows(P), grad.embed_w, grad.embed_b);
  grad.ctx_w += tape.context * dh_.row(P);
  grad.ctx_b += dh_.row(P).transpose();
}

std::uint64_t DecisionNet::checksum() const {
  const VectorR flat = flatten(params_);
  return fnv1a64(flat.data(), static_cast<std::size_t>(flat.size()) * sizeof(Real));
}

VectorR decide(const DecisionNet& net, const MatrixR& z_rho,
               const VectorR& context) {
  return net.logits(z_rho, context).unaryExpr([](Real x) { return sigmoid(x); });
}

}  // namespace blockdance
