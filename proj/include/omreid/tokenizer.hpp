#pragma once

#include <functional>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "omreid/image.hpp"
#include "omreid/modality.hpp"
#include "omreid/rng.hpp"
#include "omreid/tensor.hpp"

namespace omreid {

// Reserved ids in every vocabulary.
inline constexpr std::size_t kBosId = 0;
inline constexpr std::size_t kEosId = 1;
inline constexpr std::size_t kMaskId = 2;
inline constexpr std::size_t kFirstWordId = 3;

// Binary expert-activation signal attached to every token batch.
struct ControlSignal {
  ModalityId modality = ModalityId::R;
  bool active = false;
};

struct VisualSample {
  ModalityId modality = ModalityId::R;
  Image pixels;
  int identity = -1;
  int camera = 0;
  int view = 0;
};

struct TextSample {
  std::vector<std::size_t> token_ids;  // begins with BOS, ends with EOS
  int identity = -1;
  int camera = 0;
  int view = 0;
};

using MixedSample = std::variant<VisualSample, TextSample>;

inline ModalityId sample_modality(const MixedSample& s) {
  if (std::holds_alternative<TextSample>(s)) return ModalityId::T;
  return std::get<VisualSample>(s).modality;
}

inline int sample_identity(const MixedSample& s) {
  return std::holds_alternative<TextSample>(s) ? std::get<TextSample>(s).identity
                                               : std::get<VisualSample>(s).identity;
}

// One modality group: per-sample token sequences plus the shared control
// signal. Sequences keep their own lengths; there is no padding.
struct TokenBatch {
  ControlSignal control;
  std::vector<Tensor> embeddings;       // each [n_i x D_e]
  std::vector<std::size_t> lengths;     // valid token counts per sample
  std::vector<int> identities;
};

struct AssemblerConfig {
  std::size_t image_h = 32;
  std::size_t image_w = 16;
  std::size_t patch = 8;
  std::size_t visual_width = 64;
  std::size_t vocab_size = 64;
  std::size_t max_text_len = 24;
  std::size_t text_width = 64;
  // When set, 1-channel inputs (I, S) are replicated to 3 channels before
  // projection so the tokenizer shape matches RGB-trained weights.
  bool replicate_gray_to_rgb = false;
};

inline Tensor init_gaussian(std::vector<std::size_t> shape, double stddev, KeyedRng rng) {
  Tensor t(std::move(shape), /*requires_grad=*/true);
  for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = stddev * rng.next_gaussian();
  return t;
}

enum class ParamGroup { Base, ExpertFm };
using ParamVisitor = std::function<void(const std::string&, Tensor&, ParamGroup)>;

// Patch tokenizer for one visual modality: unfold into patch rows, project,
// layer-normalize (learned affine), prepend the class token, add learned
// positional embeddings. Weights are never shared across modalities.
class VisualTokenizer {
 public:
  VisualTokenizer() = default;

  VisualTokenizer(ModalityId mod, const AssemblerConfig& cfg, std::uint64_t seed)
      : modality_(mod), cfg_(cfg) {
    if (!is_visual(mod)) throw data_error("visual tokenizer built for text modality");
    if (cfg.image_h % cfg.patch != 0 || cfg.image_w % cfg.patch != 0)
      throw config_error("image dims " + std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w) +
                         " not divisible by patch " + std::to_string(cfg.patch));
    in_channels_ = cfg.replicate_gray_to_rgb ? 3 : modality_channels(mod);
    const std::size_t patch_dim = cfg.patch * cfg.patch * in_channels_;
    const std::size_t tokens = token_count();
    const std::string tag = "tok." + modality_name(mod);
    patch_proj_ = init_gaussian({patch_dim, cfg.visual_width}, 1.0 / std::sqrt(static_cast<double>(patch_dim)),
                                KeyedRng::from({seed, hash_str(tag + ".proj")}));
    ln_gamma_ = Tensor::full({cfg.visual_width}, 1.0, true);
    ln_beta_ = Tensor({cfg.visual_width}, true);
    class_token_ = init_gaussian({1, cfg.visual_width}, 0.02,
                                 KeyedRng::from({seed, hash_str(tag + ".cls")}));
    pos_ = init_gaussian({tokens, cfg.visual_width}, 0.02,
                         KeyedRng::from({seed, hash_str(tag + ".pos")}));
  }

  ModalityId modality() const { return modality_; }

  // n = (H/P)(W/P) + 1
  std::size_t token_count() const {
    return (cfg_.image_h / cfg_.patch) * (cfg_.image_w / cfg_.patch) + 1;
  }

  Tensor tokenize_one(const Image& img) const {
    if (img.h != cfg_.image_h || img.w != cfg_.image_w)
      throw data_error("image " + std::to_string(img.h) + "x" + std::to_string(img.w) +
                       " does not match tokenizer dims " + std::to_string(cfg_.image_h) + "x" +
                       std::to_string(cfg_.image_w));
    const std::size_t native = modality_channels(modality_);
    if (img.c != native)
      throw data_error("expected " + std::to_string(native) + " channels for modality " +
                       modality_name(modality_) + ", got " + std::to_string(img.c));
    const std::size_t p = cfg_.patch;
    const std::size_t gy = img.h / p, gx = img.w / p;
    const std::size_t patch_dim = p * p * in_channels_;
    Tensor patches({gy * gx, patch_dim});
    for (std::size_t by = 0; by < gy; ++by)
      for (std::size_t bx = 0; bx < gx; ++bx) {
        double* row = patches.data() + (by * gx + bx) * patch_dim;
        std::size_t k = 0;
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            for (std::size_t ch = 0; ch < in_channels_; ++ch)
              row[k++] = img.at(by * p + y, bx * p + x, ch % img.c);
      }
    Tensor projected = matmul(patches, patch_proj_);
    Tensor with_cls = concat({class_token_, projected}, 0);
    // position embeddings enter before the LN; normalizing bare patch
    // projections first would erase the magnitude of uniform patches
    // (LN(c*w) = LN(w) for c > 0), blinding the grayscale modalities
    Tensor positioned = add(with_cls, pos_);
    return add_rowwise(mul_rowwise(layer_norm(positioned), ln_gamma_), ln_beta_);
  }

  TokenBatch tokenize(const VisualSample& sample) const {
    if (sample.modality != modality_)
      throw data_error("sample modality " + modality_name(sample.modality) + " routed to " +
                       modality_name(modality_) + " tokenizer");
    TokenBatch batch;
    batch.control = ControlSignal{modality_, true};
    batch.embeddings.push_back(tokenize_one(sample.pixels));
    batch.lengths.push_back(token_count());
    batch.identities.push_back(sample.identity);
    return batch;
  }

  void visit_params(const ParamVisitor& visit) {
    const std::string tag = "tok." + modality_name(modality_);
    visit(tag + ".proj", patch_proj_, ParamGroup::Base);
    visit(tag + ".ln_gamma", ln_gamma_, ParamGroup::Base);
    visit(tag + ".ln_beta", ln_beta_, ParamGroup::Base);
    visit(tag + ".cls", class_token_, ParamGroup::Base);
    visit(tag + ".pos", pos_, ParamGroup::Base);
  }

 private:
  ModalityId modality_ = ModalityId::R;
  AssemblerConfig cfg_;
  std::size_t in_channels_ = 3;
  Tensor patch_proj_;   // [P*P*C x D_e]
  Tensor ln_gamma_, ln_beta_;
  Tensor class_token_;  // [1 x D_e]
  Tensor pos_;          // [n x D_e]
};

// Vocabulary mapping layer plus positional embeddings for text.
class TextTokenizer {
 public:
  TextTokenizer() = default;

  TextTokenizer(const AssemblerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    vocab_table_ = init_gaussian({cfg.vocab_size, cfg.text_width}, 0.02,
                                 KeyedRng::from({seed, hash_str("tok.text.vocab")}));
    pos_ = init_gaussian({cfg.max_text_len, cfg.text_width}, 0.02,
                         KeyedRng::from({seed, hash_str("tok.text.pos")}));
  }

  Tensor tokenize_one(const std::vector<std::size_t>& ids) const {
    if (ids.size() < 2) throw data_error("text must contain at least begin and end flags");
    if (ids.size() > cfg_.max_text_len)
      throw data_error("text length " + std::to_string(ids.size()) + " exceeds limit " +
                       std::to_string(cfg_.max_text_len));
    if (ids.front() != kBosId || ids.back() != kEosId)
      throw data_error("text must start with the begin flag and end with the end flag");
    Tensor emb = embedding_lookup(vocab_table_, ids);
    Tensor pos_slice = slice(pos_, 0, 0, ids.size());
    return add(emb, pos_slice);
  }

  TokenBatch tokenize(const TextSample& sample) const {
    TokenBatch batch;
    batch.control = ControlSignal{ModalityId::T, true};
    batch.embeddings.push_back(tokenize_one(sample.token_ids));
    batch.lengths.push_back(sample.token_ids.size());
    batch.identities.push_back(sample.identity);
    return batch;
  }

  void visit_params(const ParamVisitor& visit) {
    visit("tok.text.vocab", vocab_table_, ParamGroup::Base);
    visit("tok.text.pos", pos_, ParamGroup::Base);
  }

 private:
  AssemblerConfig cfg_;
  Tensor vocab_table_;  // [V x D_e]
  Tensor pos_;          // [max_len x D_e]
};

// The five non-shared sub-tokenizers behind one entry point.
class Assembler {
 public:
  Assembler() = default;

  Assembler(const AssemblerConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    for (ModalityId m : {ModalityId::R, ModalityId::I, ModalityId::C, ModalityId::S})
      visual_.emplace(m, VisualTokenizer(m, cfg, seed));
    text_ = TextTokenizer(cfg, seed);
  }

  const AssemblerConfig& config() const { return cfg_; }
  VisualTokenizer& visual(ModalityId m) { return visual_.at(m); }
  const VisualTokenizer& visual(ModalityId m) const { return visual_.at(m); }
  TextTokenizer& text() { return text_; }
  const TextTokenizer& text() const { return text_; }

  TokenBatch tokenize(const MixedSample& sample) const {
    if (std::holds_alternative<TextSample>(sample)) return text_.tokenize(std::get<TextSample>(sample));
    return visual_.at(sample_modality(sample)).tokenize(std::get<VisualSample>(sample));
  }

  // Groups a mixed batch by modality in canonical order R < I < C < S < T,
  // preserving within-group input order. One control signal per group.
  std::vector<TokenBatch> assemble(const std::vector<MixedSample>& samples) const {
    if (samples.empty()) throw data_error("assemble called with an empty batch");
    std::vector<TokenBatch> groups;
    for (ModalityId m : kAllModalities) {
      TokenBatch group;
      group.control = ControlSignal{m, true};
      for (const MixedSample& s : samples) {
        if (sample_modality(s) != m) continue;
        TokenBatch one = tokenize(s);
        group.embeddings.push_back(one.embeddings[0]);
        group.lengths.push_back(one.lengths[0]);
        group.identities.push_back(one.identities[0]);
      }
      if (!group.embeddings.empty()) groups.push_back(std::move(group));
    }
    return groups;
  }

  void visit_params(const ParamVisitor& visit) {
    for (auto& [m, tok] : visual_) tok.visit_params(visit);
    text_.visit_params(visit);
  }

 private:
  AssemblerConfig cfg_;
  std::map<ModalityId, VisualTokenizer> visual_;
  TextTokenizer text_;
};

}  // namespace omreid
