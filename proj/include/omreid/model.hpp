#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "omreid/checkpoint.hpp"
#include "omreid/config.hpp"

namespace omreid {

// The full retrieval model: five tokenizers, the routed visual tower and
// independent text tower, the feature mixture and the shared identity
// classifier.
class Reid5oModel {
 public:
  Reid5oModel(const RunConfig& rc, std::size_t n_classes, std::uint64_t seed)
      : assembler_(assembler_config(rc), seed),
        towers_(visual_encoder_config(rc), text_encoder_config(rc), seed),
        fm_(mixture_config(rc), seed),
        classifier_(rc.enc_projection, n_classes, seed) {}

  Assembler& assembler() { return assembler_; }
  TowerSet& towers() { return towers_; }
  FeatureMixture& fm() { return fm_; }
  IdentityClassifier& classifier() { return classifier_; }
  const Assembler& assembler() const { return assembler_; }
  const TowerSet& towers() const { return towers_; }
  const FeatureMixture& fm() const { return fm_; }
  const IdentityClassifier& classifier() const { return classifier_; }
  std::size_t embed_dim() const { return towers_.projection_dim(); }

  TowerSet::Encoded encode_sample(const MixedSample& sample) const {
    TokenBatch batch = assembler_.tokenize(sample);
    return towers_.encode_one(batch.embeddings[0], batch.control);
  }

  void visit_params(const ParamVisitor& visit) {
    assembler_.visit_params(visit);
    towers_.visit_params(visit);
    fm_.visit_params(visit);
    classifier_.visit_params(visit);
  }

  Checkpoint to_checkpoint(const std::string& digest) {
    Checkpoint ckpt;
    ckpt.config_digest = digest;
    visit_params([&](const std::string& name, Tensor& t, ParamGroup) {
      ckpt.tensors.emplace(name, to_checkpoint_tensor(t));
    });
    return ckpt;
  }

  // Restores every parameter from the checkpoint; names must match the
  // model's registry exactly in both directions.
  void load_weights(const Checkpoint& ckpt) {
    std::set<std::string> seen;
    visit_params([&](const std::string& name, Tensor& t, ParamGroup) {
      auto it = ckpt.tensors.find(name);
      if (it == ckpt.tensors.end()) throw data_error("checkpoint is missing tensor '" + name + "'");
      load_tensor_from(it->second, t, name);
      seen.insert(name);
    });
    for (const auto& [name, t] : ckpt.tensors)
      if (!seen.count(name))
        throw data_error("checkpoint tensor '" + name + "' has no parameter in this model config");
  }

 private:
  Assembler assembler_;
  TowerSet towers_;
  FeatureMixture fm_;
  IdentityClassifier classifier_;
};

}  // namespace omreid
