#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "omreid/fusion.hpp"

namespace omreid {

// ---------------------------------------------------------------------------
// similarity distribution matching
// ---------------------------------------------------------------------------

// Bidirectional SDM: the softmax(cosine/tau) rows are matched against the
// row-normalized identity-match distribution via KL(match || predicted),
// averaged over rows and over the two directions. This direction keeps the
// gradient (softmax - match), which stays informative from random
// initialization. Targets' labels may differ from the queries' labels; every
// query row must have at least one positive target.
inline Tensor sdm_loss(const Tensor& queries, const Tensor& targets, const std::vector<int>& query_labels,
                       const std::vector<int>& target_labels, double tau) {
  if (queries.rank() != 2 || targets.rank() != 2 || queries.dim(1) != targets.dim(1))
    throw dim_error("sdm_loss expects [N x D] queries and [M x D] targets of equal D");
  const std::size_t n = queries.dim(0), m = targets.dim(0);
  if (n < 2 || m < 2) throw dim_error("sdm_loss needs at least two rows per side");
  if (query_labels.size() != n || target_labels.size() != m)
    throw dim_error("sdm_loss label counts do not match embedding rows");

  Tensor match({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double y = (query_labels[i] == target_labels[j]) ? 1.0 : 0.0;
      match.at(i, j) = y;
      row_sum += y;
    }
    if (row_sum == 0.0)
      throw data_error("sdm_loss: query row " + std::to_string(i) + " has no positive target");
    for (std::size_t j = 0; j < m; ++j) match.at(i, j) /= row_sum;
  }
  Tensor match_t({m, n});
  for (std::size_t j = 0; j < m; ++j) {
    double row_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) row_sum += (query_labels[i] == target_labels[j]) ? 1.0 : 0.0;
    if (row_sum == 0.0)
      throw data_error("sdm_loss: target row " + std::to_string(j) + " has no positive query");
    for (std::size_t i = 0; i < n; ++i)
      match_t.at(j, i) = ((query_labels[i] == target_labels[j]) ? 1.0 : 0.0) / row_sum;
  }

  Tensor sim = scale(matmul(l2_normalize_rows(queries), transpose(l2_normalize_rows(targets))), 1.0 / tau);
  Tensor q2t = kl_vs_softmax(match, sim);
  Tensor t2q = kl_vs_softmax(match_t, transpose(sim));
  return scale(add(q2t, t2q), 0.5);
}

inline Tensor sdm_loss(const Tensor& queries, const Tensor& targets, const std::vector<int>& labels,
                       double tau) {
  return sdm_loss(queries, targets, labels, labels, tau);
}

// ---------------------------------------------------------------------------
// identity classification
// ---------------------------------------------------------------------------

// One linear classifier over the training identities, shared by every
// representation family.
class IdentityClassifier {
 public:
  IdentityClassifier() = default;

  IdentityClassifier(std::size_t embed_dim, std::size_t n_identities, std::uint64_t seed)
      : n_identities_(n_identities) {
    weight_ = init_gaussian({embed_dim, n_identities}, 1.0 / std::sqrt(static_cast<double>(embed_dim)),
                            KeyedRng::from({seed, hash_str("classifier.W")}));
    bias_ = Tensor({n_identities}, true);
  }

  std::size_t n_identities() const { return n_identities_; }

  Tensor logits(const Tensor& reps) const {
    Tensor r = reps.rank() == 1 ? reshape(reps, {1, reps.size()}) : reps;
    return add_rowwise(matmul(r, weight_), bias_);
  }

  Tensor loss(const Tensor& reps, const std::vector<std::size_t>& labels) const {
    for (std::size_t l : labels)
      if (l >= n_identities_)
        throw data_error("identity label " + std::to_string(l) + " out of range for " +
                         std::to_string(n_identities_) + " training identities");
    return cross_entropy(logits(reps), labels);
  }

  void visit_params(const ParamVisitor& visit) {
    visit("classifier.W", weight_, ParamGroup::Base);
    visit("classifier.b", bias_, ParamGroup::Base);
  }

 private:
  std::size_t n_identities_ = 0;
  Tensor weight_;  // [D x n_ids]
  Tensor bias_;
};

inline Tensor ic_loss(const Tensor& rep, std::size_t label, const IdentityClassifier& classifier) {
  return classifier.loss(rep, {label});
}

// ---------------------------------------------------------------------------
// composite objective
// ---------------------------------------------------------------------------

// One training batch: P identity tuples, their gallery anchors and the 15
// fused query families.
struct BatchPack {
  std::vector<int> identities;             // raw dataset identity ids, one per tuple
  std::vector<std::size_t> class_labels;   // classifier indices, one per tuple
  Tensor gallery;                          // z^R [P x D]
  std::map<ModalityCombo, Tensor> fused;   // combo -> [P x D]
};

struct LossReport {
  double sdm_total = 0.0;
  double ic_total = 0.0;
  double combined = 0.0;
  std::vector<std::pair<std::string, double>> sdm_per_combo;
  std::vector<std::pair<std::string, double>> ic_per_family;
  Tensor combined_tensor;  // scalar node for backward
};

// SDM over the 15 RGB-free combos against the gallery anchors, identity
// classification over those 15 families plus the gallery itself, combined as
// sdm + alpha * ic.
inline LossReport total_objective(const BatchPack& pack, double alpha, double tau,
                                  const IdentityClassifier& classifier) {
  if (alpha < 0.0) throw config_error("alpha must be nonnegative");
  if (pack.fused.size() != 15)
    throw data_error("batch pack carries " + std::to_string(pack.fused.size()) + " fused families, expected 15");
  LossReport report;
  Tensor sdm_sum, ic_sum;
  for (const auto& [combo, queries] : pack.fused) {
    Tensor term;
    try {
      term = sdm_loss(queries, pack.gallery, pack.identities, tau);
    } catch (const std::exception& e) {
      throw data_error("sdm for combo " + combo.label() + ": " + e.what());
    }
    report.sdm_per_combo.emplace_back(combo.label(), term.item());
    sdm_sum = sdm_sum.defined() ? add(sdm_sum, term) : term;
  }
  Tensor ic_r = classifier.loss(pack.gallery, pack.class_labels);
  report.ic_per_family.emplace_back("R", ic_r.item());
  ic_sum = ic_r;
  for (const auto& [combo, queries] : pack.fused) {
    Tensor term;
    try {
      term = classifier.loss(queries, pack.class_labels);
    } catch (const std::exception& e) {
      throw data_error("ic for combo " + combo.label() + ": " + e.what());
    }
    report.ic_per_family.emplace_back(combo.label(), term.item());
    ic_sum = add(ic_sum, term);
  }
  report.combined_tensor = add(sdm_sum, scale(ic_sum, alpha));
  report.sdm_total = sdm_sum.item();
  report.ic_total = ic_sum.item();
  report.combined = report.combined_tensor.item();
  return report;
}

// ---------------------------------------------------------------------------
// optimizer and schedule
// ---------------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Single-tensor Adam update with bias correction; step_count is the 1-based
// step this update belongs to.
inline void adam_update(Tensor& param, const std::vector<double>& grad, std::vector<double>& m,
                        std::vector<double>& v, std::size_t step_count, double lr, const AdamConfig& cfg) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size())
    throw dim_error("adam state does not match parameter shape");
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count));
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    param.at(i) -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

// Adam over the model's parameter registry with two learning-rate groups:
// base weights vs experts + feature mixture.
class AdamOptimizer {
 public:
  struct Slot {
    std::string name;
    Tensor param;
    ParamGroup group;
    std::vector<double> m, v;
  };

  AdamOptimizer() = default;
  explicit AdamOptimizer(const AdamConfig& cfg) : cfg_(cfg) {}

  void add_param(const std::string& name, Tensor param, ParamGroup group) {
    Slot s{name, std::move(param), group, {}, {}};
    s.m.assign(s.param.size(), 0.0);
    s.v.assign(s.param.size(), 0.0);
    slots_.push_back(std::move(s));
  }

  std::size_t step_count() const { return step_; }
  std::vector<Slot>& slots() { return slots_; }

  void zero_grad() {
    for (Slot& s : slots_) s.param.zero_grad();
  }

  // Rescales all gradients so their global L2 norm is at most max_norm;
  // returns the pre-clip norm. Tames the 1/tau-amplified similarity
  // gradients that otherwise destabilize small-batch training.
  double clip_global_norm(double max_norm) {
    double norm_sq = 0.0;
    for (Slot& s : slots_)
      for (double g : s.param.grad_ref()) norm_sq += g * g;
    const double norm = std::sqrt(norm_sq);
    if (norm > max_norm && norm > 0.0) {
      const double factor = max_norm / norm;
      for (Slot& s : slots_)
        for (double& g : s.param.grad_ref()) g *= factor;
    }
    return norm;
  }

  void step(double lr_base, double lr_expert_fm) {
    ++step_;
    for (Slot& s : slots_) {
      const double lr = (s.group == ParamGroup::ExpertFm) ? lr_expert_fm : lr_base;
      adam_update(s.param, s.param.grad_ref(), s.m, s.v, step_, lr, cfg_);
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Slot> slots_;
  std::size_t step_ = 0;
};

struct ScheduleConfig {
  double lr_base = 1e-5;
  double lr_expert_fm = 5e-5;
  double lr_start = 1e-6;
  double warmup_epochs = 5.0;
};

struct GroupLr {
  double base = 0.0;
  double expert_fm = 0.0;
};

// Linear warmup from lr_start to the group base over warmup_epochs, then
// constant. The warmup factor is shared by both groups.
inline GroupLr lr_schedule(double epoch, const ScheduleConfig& cfg) {
  if (epoch < 0.0) throw config_error("epoch must be nonnegative");
  double f = 1.0;
  if (cfg.warmup_epochs > 0.0 && epoch < cfg.warmup_epochs) {
    const double start_frac = cfg.lr_start / cfg.lr_base;
    f = start_frac + (1.0 - start_frac) * (epoch / cfg.warmup_epochs);
  }
  return GroupLr{cfg.lr_base * f, cfg.lr_expert_fm * f};
}

// ---------------------------------------------------------------------------
// input augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
  double flip_p = 0.5;
  std::size_t crop_pad = 4;
  double erase_p = 0.5;
  double erase_area_min = 0.02;
  double erase_area_max = 0.33;
  double erase_aspect_min = 0.3;
  double erase_aspect_max = 3.3;
  double erase_fill = 0.5;
  double text_select_p = 0.15;
  double text_mask_frac = 0.8;
};

inline Image hflip(const Image& img) {
  Image out(img.h, img.w, img.c);
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x)
      for (std::size_t ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(y, img.w - 1 - x, ch);
  return out;
}

// zero-pad by `pad` on each side, then crop back to the original size at
// offset (dy, dx) in [0, 2*pad]
inline Image pad_crop(const Image& img, std::size_t pad, std::size_t dy, std::size_t dx) {
  if (dy > 2 * pad || dx > 2 * pad) throw data_error("pad_crop offset out of range");
  Image out(img.h, img.w, img.c);
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x) {
      // source coordinates in the padded frame
      const long sy = static_cast<long>(y + dy) - static_cast<long>(pad);
      const long sx = static_cast<long>(x + dx) - static_cast<long>(pad);
      for (std::size_t ch = 0; ch < img.c; ++ch) {
        const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<long>(img.h) && sx < static_cast<long>(img.w);
        out.at(y, x, ch) = inside ? img.at(static_cast<std::size_t>(sy), static_cast<std::size_t>(sx), ch) : 0.0;
      }
    }
  return out;
}

inline Image erase_rect(const Image& img, std::size_t y0, std::size_t x0, std::size_t eh, std::size_t ew,
                        double fill) {
  Image out = img;
  for (std::size_t y = y0; y < std::min(img.h, y0 + eh); ++y)
    for (std::size_t x = x0; x < std::min(img.w, x0 + ew); ++x)
      for (std::size_t ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = fill;
  return out;
}

inline VisualSample augment(const VisualSample& sample, const AugmentConfig& cfg, KeyedRng& rng) {
  VisualSample out = sample;
  if (rng.next_double() < cfg.flip_p) out.pixels = hflip(out.pixels);
  const std::size_t dy = static_cast<std::size_t>(rng.next_below(2 * cfg.crop_pad + 1));
  const std::size_t dx = static_cast<std::size_t>(rng.next_below(2 * cfg.crop_pad + 1));
  out.pixels = pad_crop(out.pixels, cfg.crop_pad, dy, dx);
  if (rng.next_double() < cfg.erase_p) {
    const double area = static_cast<double>(out.pixels.h * out.pixels.w);
    // a few placement attempts; skip erasing if none fits
    for (int attempt = 0; attempt < 10; ++attempt) {
      const double target = (cfg.erase_area_min + (cfg.erase_area_max - cfg.erase_area_min) * rng.next_double()) * area;
      const double aspect = cfg.erase_aspect_min + (cfg.erase_aspect_max - cfg.erase_aspect_min) * rng.next_double();
      const std::size_t eh = static_cast<std::size_t>(std::lround(std::sqrt(target * aspect)));
      const std::size_t ew = static_cast<std::size_t>(std::lround(std::sqrt(target / aspect)));
      if (eh == 0 || ew == 0 || eh > out.pixels.h || ew > out.pixels.w) continue;
      const std::size_t y0 = static_cast<std::size_t>(rng.next_below(out.pixels.h - eh + 1));
      const std::size_t x0 = static_cast<std::size_t>(rng.next_below(out.pixels.w - ew + 1));
      out.pixels = erase_rect(out.pixels, y0, x0, eh, ew, cfg.erase_fill);
      break;
    }
  }
  return out;
}

// Non-flag tokens are independently selected with text_select_p; a selected
// token becomes the mask id with probability text_mask_frac, otherwise a
// random word id.
inline TextSample augment(const TextSample& sample, const AugmentConfig& cfg, std::size_t vocab_size,
                          KeyedRng& rng) {
  TextSample out = sample;
  for (std::size_t i = 1; i + 1 < out.token_ids.size(); ++i) {
    if (rng.next_double() >= cfg.text_select_p) continue;
    if (rng.next_double() < cfg.text_mask_frac) {
      out.token_ids[i] = kMaskId;
    } else {
      out.token_ids[i] = kFirstWordId + rng.next_below(vocab_size - kFirstWordId);
    }
  }
  return out;
}

inline MixedSample augment(const MixedSample& sample, const AugmentConfig& cfg, std::size_t vocab_size,
                           KeyedRng& rng) {
  if (std::holds_alternative<TextSample>(sample))
    return augment(std::get<TextSample>(sample), cfg, vocab_size, rng);
  return augment(std::get<VisualSample>(sample), cfg, rng);
}

}  // namespace omreid
