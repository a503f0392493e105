#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "omreid/encoder.hpp"

namespace omreid {

// A nonempty subset of the query modalities {I, C, S, T}, held in canonical
// order. Construction canonicalizes, so member order supplied by callers can
// never change downstream results.
class ModalityCombo {
 public:
  explicit ModalityCombo(std::vector<ModalityId> members) {
    if (members.empty()) throw data_error("modality combo must be nonempty");
    std::sort(members.begin(), members.end());
    members.erase(std::unique(members.begin(), members.end()), members.end());
    for (ModalityId m : members)
      if (m == ModalityId::R) throw data_error("RGB is the gallery modality and never enters a query combo");
    members_ = std::move(members);
  }

  ModalityCombo(std::initializer_list<ModalityId> members) : ModalityCombo(std::vector<ModalityId>(members)) {}

  const std::vector<ModalityId>& members() const { return members_; }
  std::size_t size() const { return members_.size(); }
  bool contains(ModalityId m) const { return std::find(members_.begin(), members_.end(), m) != members_.end(); }

  std::string label() const {
    std::string s;
    for (ModalityId m : members_) s += modality_letter(m);
    return s;
  }

  bool operator==(const ModalityCombo& o) const { return members_ == o.members_; }
  // size-then-lexicographic, the enumeration order
  bool operator<(const ModalityCombo& o) const {
    if (members_.size() != o.members_.size()) return members_.size() < o.members_.size();
    return members_ < o.members_;
  }

 private:
  std::vector<ModalityId> members_;
};

// The 15 nonempty subsets of {I, C, S, T} in size-then-lexicographic order.
inline std::vector<ModalityCombo> enumerate_combos() {
  std::vector<ModalityCombo> combos;
  for (unsigned mask = 1; mask < 16; ++mask) {
    std::vector<ModalityId> members;
    for (std::size_t b = 0; b < 4; ++b)
      if (mask & (1u << b)) members.push_back(kQueryModalities[b]);
    combos.emplace_back(std::move(members));
  }
  std::sort(combos.begin(), combos.end());
  return combos;
}

struct FusedEmbedding {
  FusedEmbedding() : combo({ModalityId::I}) {}
  FusedEmbedding(ModalityCombo c, Tensor v) : combo(std::move(c)), vector(std::move(v)) {}
  ModalityCombo combo;
  Tensor vector;  // [D]
};

struct MixtureConfig {
  std::size_t hidden = 512;
  std::size_t heads = 8;
  std::size_t embed_dim = 512;  // D of the incoming sequences
};

// The feature mixture: LN over the concatenated token sequences, a linear
// lift into the mixture width, MSA with residual, one transformer block, and
// an MLP whose final stage is average pooling over the token axis.
class FeatureMixture {
 public:
  FeatureMixture() = default;

  FeatureMixture(const MixtureConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg.heads == 0 || cfg.hidden % cfg.heads != 0)
      throw config_error("mixture hidden " + std::to_string(cfg.hidden) + " not divisible by heads " +
                         std::to_string(cfg.heads));
    const std::size_t d = cfg.embed_dim;
    const std::size_t h = cfg.hidden;
    const std::vector<ModalityId> none;
    ln_in_gamma_ = Tensor::full({d}, 1.0, true);
    ln_in_beta_ = Tensor({d}, true);
    lift_ = RoutedLinear("fm.lift", d, h, 0, none, seed);
    msa_qkv_ = RoutedLinear("fm.msa.qkv", h, 3 * h, 0, none, seed);
    msa_out_ = RoutedLinear("fm.msa.out", h, h, 0, none, seed);
    tf_ln1_gamma_ = Tensor::full({h}, 1.0, true);
    tf_ln1_beta_ = Tensor({h}, true);
    tf_ln2_gamma_ = Tensor::full({h}, 1.0, true);
    tf_ln2_beta_ = Tensor({h}, true);
    tf_qkv_ = RoutedLinear("fm.tf.qkv", h, 3 * h, 0, none, seed);
    tf_out_ = RoutedLinear("fm.tf.out", h, h, 0, none, seed);
    tf_mlp_up_ = RoutedLinear("fm.tf.mlp_up", h, 4 * h, 0, none, seed);
    tf_mlp_down_ = RoutedLinear("fm.tf.mlp_down", 4 * h, h, 0, none, seed);
    head_hidden_ = RoutedLinear("fm.head.hidden", h, h, 0, none, seed);
    head_out_ = RoutedLinear("fm.head.out", h, d, 0, none, seed);
  }

  const MixtureConfig& config() const { return cfg_; }

  FusedEmbedding fuse(const std::map<ModalityId, Tensor>& sequences, const ModalityCombo& combo) const {
    std::vector<Tensor> parts;
    parts.reserve(combo.size());
    for (ModalityId m : combo.members()) {
      auto it = sequences.find(m);
      if (it == sequences.end())
        throw data_error("combo " + combo.label() + " is missing a sequence for modality " + modality_name(m));
      if (it->second.rank() != 2 || it->second.dim(1) != cfg_.embed_dim)
        throw dim_error("combo " + combo.label() + ": sequence for " + modality_name(m) + " has dim " +
                        detail::shape_str(it->second.shape()) + ", expected [. x " +
                        std::to_string(cfg_.embed_dim) + "]");
      parts.push_back(it->second);
    }
    const ControlSignal off{};
    Tensor x = parts.size() == 1 ? parts[0] : concat(parts, 0);
    x = add_rowwise(mul_rowwise(layer_norm(x), ln_in_gamma_), ln_in_beta_);
    x = lift_.forward(x, off);
    x = add(x, msa(x, msa_qkv_, msa_out_));
    // one pre-norm transformer block
    Tensor n1 = add_rowwise(mul_rowwise(layer_norm(x), tf_ln1_gamma_), tf_ln1_beta_);
    x = add(x, msa(n1, tf_qkv_, tf_out_));
    Tensor n2 = add_rowwise(mul_rowwise(layer_norm(x), tf_ln2_gamma_), tf_ln2_beta_);
    x = add(x, tf_mlp_down_.forward(gelu(tf_mlp_up_.forward(n2, off)), off));
    // MLP head, final stage pools the token axis
    Tensor y = head_out_.forward(gelu(head_hidden_.forward(x, off)), off);
    return FusedEmbedding{combo, mean_pool(y, 0)};
  }

  std::map<ModalityCombo, FusedEmbedding> fuse_all(const std::map<ModalityId, Tensor>& sequences) const {
    std::map<ModalityCombo, FusedEmbedding> out;
    for (const ModalityCombo& combo : enumerate_combos()) out.emplace(combo, fuse(sequences, combo));
    return out;
  }

  void visit_params(const ParamVisitor& visit) {
    visit("fm.ln_in_gamma", ln_in_gamma_, ParamGroup::ExpertFm);
    visit("fm.ln_in_beta", ln_in_beta_, ParamGroup::ExpertFm);
    for (RoutedLinear* l : {&lift_, &msa_qkv_, &msa_out_, &tf_qkv_, &tf_out_, &tf_mlp_up_, &tf_mlp_down_,
                            &head_hidden_, &head_out_}) {
      // FM weights share the expert learning-rate group
      l->visit_params([&](const std::string& name, Tensor& t, ParamGroup) {
        visit(name, t, ParamGroup::ExpertFm);
      });
    }
    visit("fm.tf.ln1_gamma", tf_ln1_gamma_, ParamGroup::ExpertFm);
    visit("fm.tf.ln1_beta", tf_ln1_beta_, ParamGroup::ExpertFm);
    visit("fm.tf.ln2_gamma", tf_ln2_gamma_, ParamGroup::ExpertFm);
    visit("fm.tf.ln2_beta", tf_ln2_beta_, ParamGroup::ExpertFm);
  }

 private:
  Tensor msa(const Tensor& x, const RoutedLinear& qkv_layer, const RoutedLinear& out_layer) const {
    const ControlSignal off{};
    const std::size_t h = cfg_.hidden;
    Tensor qkv = qkv_layer.forward(x, off);
    Tensor q = slice(qkv, 1, 0, h);
    Tensor k = slice(qkv, 1, h, h);
    Tensor v = slice(qkv, 1, 2 * h, h);
    return out_layer.forward(attention_core(q, k, v, cfg_.heads), off);
  }

  MixtureConfig cfg_;
  Tensor ln_in_gamma_, ln_in_beta_;
  RoutedLinear lift_;
  RoutedLinear msa_qkv_, msa_out_;
  Tensor tf_ln1_gamma_, tf_ln1_beta_, tf_ln2_gamma_, tf_ln2_beta_;
  RoutedLinear tf_qkv_, tf_out_, tf_mlp_up_, tf_mlp_down_;
  RoutedLinear head_hidden_, head_out_;
};

inline FusedEmbedding fuse(const std::map<ModalityId, Tensor>& sequences, const ModalityCombo& combo,
                           const FeatureMixture& fm) {
  return fm.fuse(sequences, combo);
}

inline std::map<ModalityCombo, FusedEmbedding> fuse_all(const std::map<ModalityId, Tensor>& sequences,
                                                        const FeatureMixture& fm) {
  return fm.fuse_all(sequences);
}

}  // namespace omreid
