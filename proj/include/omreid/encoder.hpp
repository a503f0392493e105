#pragma once

#include <map>
#include <string>
#include <vector>

#include "omreid/tokenizer.hpp"

namespace omreid {

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t rank = 2;                       // low-rank expert capacity; 0 disables experts
  std::size_t projection_dim = 32;            // shared embedding space D
  bool fused_qkv = true;
  std::vector<ModalityId> expert_modalities;  // which modalities own an expert

  std::size_t head_dim() const {
    if (heads == 0 || width % heads != 0)
      throw config_error("encoder width " + std::to_string(width) + " not divisible by heads " +
                         std::to_string(heads));
    return width / heads;
  }
};

// A linear layer with per-modality low-rank experts. The base path computes
// W x + bias; when the control signal is active, the expert pair (B, A) of
// that modality adds B A x. Inactive experts are never touched, so they stay
// off the tape and receive no gradient.
class RoutedLinear {
 public:
  RoutedLinear() = default;

  RoutedLinear(const std::string& name, std::size_t d, std::size_t k, std::size_t rank,
               const std::vector<ModalityId>& expert_mods, std::uint64_t seed)
      : name_(name), d_(d), k_(k), rank_(rank) {
    // fan-in scaling keeps activation magnitude through random-init stacks
    weight_ = init_gaussian({d, k}, 1.0 / std::sqrt(static_cast<double>(d)),
                            KeyedRng::from({seed, hash_str(name + ".W")}));
    bias_ = Tensor({k}, true);
    if (rank > 0 && !expert_mods.empty()) {
      if (rank > std::min(d, k) / 2)
        throw config_error("expert rank " + std::to_string(rank) + " too large for " + std::to_string(d) +
                           "x" + std::to_string(k) + " layer (must be <= min/2)");
      for (ModalityId m : expert_mods) {
        Expert e;
        e.down = Tensor({d, rank}, true);  // B starts at zero, so BA = 0 at init
        e.up = init_gaussian({rank, k}, 0.02,
                             KeyedRng::from({seed, hash_str(name + ".expert." + modality_name(m) + ".A")}));
        experts_.emplace(m, std::move(e));
      }
    }
  }

  Tensor forward(const Tensor& x, const ControlSignal& c) const {
    if (x.rank() != 2 || x.dim(1) != d_)
      throw dim_error("routed linear '" + name_ + "' expects [. x " + std::to_string(d_) + "], got " +
                      detail::shape_str(x.shape()));
    Tensor y = add_rowwise(matmul(x, weight_), bias_);
    if (c.active) {
      auto it = experts_.find(c.modality);
      if (it == experts_.end())
        throw data_error("routed linear '" + name_ + "' has no expert for active modality " +
                         modality_name(c.modality));
      y = add(y, matmul(matmul(x, it->second.down), it->second.up));
    }
    return y;
  }

  std::size_t in_dim() const { return d_; }
  std::size_t out_dim() const { return k_; }
  bool has_expert(ModalityId m) const { return experts_.count(m) > 0; }
  Tensor& expert_down(ModalityId m) { return experts_.at(m).down; }
  Tensor& expert_up(ModalityId m) { return experts_.at(m).up; }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }

  void visit_params(const ParamVisitor& visit) {
    visit(name_ + ".W", weight_, ParamGroup::Base);
    visit(name_ + ".b", bias_, ParamGroup::Base);
    for (auto& [m, e] : experts_) {
      visit(name_ + ".expert." + modality_name(m) + ".B", e.down, ParamGroup::ExpertFm);
      visit(name_ + ".expert." + modality_name(m) + ".A", e.up, ParamGroup::ExpertFm);
    }
  }

 private:
  struct Expert {
    Tensor down;  // B [d x r]
    Tensor up;    // A [r x k]
  };

  std::string name_;
  std::size_t d_ = 0, k_ = 0, rank_ = 0;
  Tensor weight_;  // [d x k]
  Tensor bias_;    // [k]
  std::map<ModalityId, Expert> experts_;
};

// standalone form of the router equation, used directly by tests
inline Tensor routed_linear_forward(const Tensor& x, const RoutedLinear& layer, const ControlSignal& c) {
  return layer.forward(x, c);
}

// Scaled-dot-product multi-head attention over already-projected q/k/v
// [n x d]; returns the concatenated head outputs [n x d].
inline Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t n_heads) {
  const std::size_t d = q.dim(1);
  if (n_heads == 0 || d % n_heads != 0)
    throw dim_error("attention width " + std::to_string(d) + " not divisible by " + std::to_string(n_heads) +
                    " heads");
  const std::size_t hd = d / n_heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    Tensor qh = slice(q, 1, h * hd, hd);
    Tensor kh = slice(k, 1, h * hd, hd);
    Tensor vh = slice(v, 1, h * hd, hd);
    Tensor attn = softmax(scale(matmul(qh, transpose(kh)), attn_scale), 1);
    heads.push_back(matmul(attn, vh));
  }
  return n_heads == 1 ? heads[0] : concat(heads, 1);
}

// Pre-norm transformer tower: MSA then GELU MLP, residuals around both, a
// final layer norm, every linear routed. A tower configured without expert
// modalities degenerates to plain linear layers.
class Encoder {
 public:
  Encoder() = default;

  Encoder(const std::string& name, const EncoderConfig& cfg, std::uint64_t seed) : name_(name), cfg_(cfg) {
    cfg.head_dim();  // validate divisibility
    const std::size_t d = cfg.width;
    const std::size_t h = cfg.mlp_ratio * d;
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      Block b;
      const std::string base = name + ".block" + std::to_string(l);
      b.ln1_gamma = Tensor::full({d}, 1.0, true);
      b.ln1_beta = Tensor({d}, true);
      b.ln2_gamma = Tensor::full({d}, 1.0, true);
      b.ln2_beta = Tensor({d}, true);
      if (cfg.fused_qkv) {
        b.qkv = RoutedLinear(base + ".qkv", d, 3 * d, cfg.rank, cfg.expert_modalities, seed);
      } else {
        b.q = RoutedLinear(base + ".q", d, d, cfg.rank, cfg.expert_modalities, seed);
        b.k = RoutedLinear(base + ".k", d, d, cfg.rank, cfg.expert_modalities, seed);
        b.v = RoutedLinear(base + ".v", d, d, cfg.rank, cfg.expert_modalities, seed);
      }
      b.attn_out = RoutedLinear(base + ".attn_out", d, d, cfg.rank, cfg.expert_modalities, seed);
      b.mlp_up = RoutedLinear(base + ".mlp_up", d, h, cfg.rank, cfg.expert_modalities, seed);
      b.mlp_down = RoutedLinear(base + ".mlp_down", h, d, cfg.rank, cfg.expert_modalities, seed);
      blocks_.push_back(std::move(b));
    }
    if (cfg.layers > 0) {
      final_gamma_ = Tensor::full({d}, 1.0, true);
      final_beta_ = Tensor({d}, true);
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  std::size_t block_count() const { return blocks_.size(); }
  RoutedLinear& linear(std::size_t block, const std::string& which) {
    Block& b = blocks_.at(block);
    if (which == "qkv") return b.qkv;
    if (which == "attn_out") return b.attn_out;
    if (which == "mlp_up") return b.mlp_up;
    if (which == "mlp_down") return b.mlp_down;
    throw config_error("unknown linear '" + which + "'");
  }

  // [n x width] -> [n x width]; a zero-layer tower is the identity
  Tensor forward(const Tensor& tokens, const ControlSignal& c) const {
    if (tokens.rank() != 2 || tokens.dim(1) != cfg_.width)
      throw dim_error("encoder '" + name_ + "' width " + std::to_string(cfg_.width) +
                      " does not match token dim " + detail::shape_str(tokens.shape()));
    Tensor x = tokens;
    for (const Block& b : blocks_) {
      Tensor normed = affine_ln(x, b.ln1_gamma, b.ln1_beta);
      x = add(x, attention(normed, b, c));
      Tensor normed2 = affine_ln(x, b.ln2_gamma, b.ln2_beta);
      Tensor hidden = gelu(b.mlp_up.forward(normed2, c));
      x = add(x, b.mlp_down.forward(hidden, c));
    }
    if (!blocks_.empty()) x = affine_ln(x, final_gamma_, final_beta_);
    return x;
  }

  void visit_params(const ParamVisitor& visit) {
    for (std::size_t l = 0; l < blocks_.size(); ++l) {
      Block& b = blocks_[l];
      const std::string base = name_ + ".block" + std::to_string(l);
      visit(base + ".ln1_gamma", b.ln1_gamma, ParamGroup::Base);
      visit(base + ".ln1_beta", b.ln1_beta, ParamGroup::Base);
      visit(base + ".ln2_gamma", b.ln2_gamma, ParamGroup::Base);
      visit(base + ".ln2_beta", b.ln2_beta, ParamGroup::Base);
      if (cfg_.fused_qkv) {
        b.qkv.visit_params(visit);
      } else {
        b.q.visit_params(visit);
        b.k.visit_params(visit);
        b.v.visit_params(visit);
      }
      b.attn_out.visit_params(visit);
      b.mlp_up.visit_params(visit);
      b.mlp_down.visit_params(visit);
    }
    if (!blocks_.empty()) {
      visit(name_ + ".final_gamma", final_gamma_, ParamGroup::Base);
      visit(name_ + ".final_beta", final_beta_, ParamGroup::Base);
    }
  }

 private:
  struct Block {
    Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    RoutedLinear qkv, q, k, v, attn_out, mlp_up, mlp_down;
  };

  static Tensor affine_ln(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
    return add_rowwise(mul_rowwise(layer_norm(x), gamma), beta);
  }

  Tensor attention(const Tensor& x, const Block& b, const ControlSignal& c) const {
    const std::size_t d = cfg_.width;
    Tensor q, k, v;
    if (cfg_.fused_qkv) {
      Tensor qkv = b.qkv.forward(x, c);
      q = slice(qkv, 1, 0, d);
      k = slice(qkv, 1, d, d);
      v = slice(qkv, 1, 2 * d, d);
    } else {
      q = b.q.forward(x, c);
      k = b.k.forward(x, c);
      v = b.v.forward(x, c);
    }
    return b.attn_out.forward(attention_core(q, k, v, cfg_.heads), c);
  }

  std::string name_;
  EncoderConfig cfg_;
  std::vector<Block> blocks_;
  Tensor final_gamma_, final_beta_;
};

// Visual tower (routed, experts for R/I/C/S) plus an independent text tower,
// each with a projection into the shared D-dimensional space.
class TowerSet {
 public:
  TowerSet() = default;

  TowerSet(const EncoderConfig& visual_cfg, const EncoderConfig& text_cfg, std::uint64_t seed)
      : visual_cfg_(visual_cfg), text_cfg_(text_cfg) {
    if (visual_cfg.projection_dim != text_cfg.projection_dim)
      throw config_error("visual and text projections must land in the same space");
    visual_tower_ = Encoder("visual", visual_cfg, seed);
    text_tower_ = Encoder("text", text_cfg, seed);
    visual_projection_ = init_gaussian({visual_cfg.width, visual_cfg.projection_dim},
                                       1.0 / std::sqrt(static_cast<double>(visual_cfg.width)),
                                       KeyedRng::from({seed, hash_str("visual.projection")}));
    text_projection_ = init_gaussian({text_cfg.width, text_cfg.projection_dim},
                                     1.0 / std::sqrt(static_cast<double>(text_cfg.width)),
                                     KeyedRng::from({seed, hash_str("text.projection")}));
  }

  std::size_t projection_dim() const { return visual_cfg_.projection_dim; }
  Encoder& visual_tower() { return visual_tower_; }
  Encoder& text_tower() { return text_tower_; }
  const Encoder& visual_tower() const { return visual_tower_; }
  const Encoder& text_tower() const { return text_tower_; }
  const EncoderConfig& visual_config() const { return visual_cfg_; }
  const EncoderConfig& text_config() const { return text_cfg_; }

  struct Encoded {
    Tensor sequence;  // [n x D]
    Tensor pooled;    // [D]
  };

  // Runs one token sequence through its tower and projects to D. Pooled
  // output is the projected class token for visual inputs and the projected
  // end-flag token for text.
  Encoded encode_one(const Tensor& tokens, const ControlSignal& control) const {
    const bool textual = (control.modality == ModalityId::T);
    const Encoder& tower = textual ? text_tower_ : visual_tower_;
    // the text tower carries no experts; its control signal stays inactive
    const ControlSignal c = textual ? ControlSignal{ModalityId::T, false} : control;
    Tensor hidden = tower.forward(tokens, c);
    Tensor sequence = matmul(hidden, textual ? text_projection_ : visual_projection_);
    const std::size_t pool_row = textual ? sequence.dim(0) - 1 : 0;
    Tensor pooled = reshape(slice(sequence, 0, pool_row, 1), {sequence.dim(1)});
    return Encoded{sequence, pooled};
  }

  std::vector<Encoded> encode(const TokenBatch& batch) const {
    std::vector<Encoded> out;
    out.reserve(batch.embeddings.size());
    for (const Tensor& seq : batch.embeddings) out.push_back(encode_one(seq, batch.control));
    return out;
  }

  void visit_params(const ParamVisitor& visit) {
    visual_tower_.visit_params(visit);
    text_tower_.visit_params(visit);
    visit("visual.projection", visual_projection_, ParamGroup::Base);
    visit("text.projection", text_projection_, ParamGroup::Base);
  }

 private:
  EncoderConfig visual_cfg_, text_cfg_;
  Encoder visual_tower_, text_tower_;
  Tensor visual_projection_, text_projection_;
};

// Extra parameters added per expert-modality: for each block, low-rank pairs
// on the fused qkv (d -> 3d), attention out (d -> d) and both MLP linears
// (d -> mlp_ratio*d -> d); each pair costs r * (d_in + d_out).
inline std::size_t count_expert_params(const EncoderConfig& cfg, std::size_t n_experts) {
  const std::size_t d = cfg.width;
  const std::size_t h = cfg.mlp_ratio * d;
  std::size_t per_layer = 0;
  if (cfg.fused_qkv) {
    per_layer += d + 3 * d;
  } else {
    per_layer += 3 * (d + d);
  }
  per_layer += d + d;  // attention out
  per_layer += d + h;  // mlp up
  per_layer += h + d;  // mlp down
  return n_experts * cfg.layers * cfg.rank * per_layer;
}

// Multiply-accumulates x2 spent in the active expert paths over one forward
// pass of `tokens` tokens (one expert active per input).
inline std::size_t count_expert_flops(const EncoderConfig& cfg, std::size_t tokens) {
  return 2 * tokens * count_expert_params(cfg, 1);
}

}  // namespace omreid
