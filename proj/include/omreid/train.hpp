#pragma once

#include <filesystem>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "omreid/model.hpp"

namespace omreid {

inline constexpr double kGradClipNorm = 1.0;

struct TrainStats {
  std::vector<std::string> log_lines;
  double first_combined = 0.0;
  double final_combined = 0.0;
  std::size_t steps = 0;
};

struct TrainedModel {
  std::shared_ptr<Reid5oModel> model;
  std::shared_ptr<AdamOptimizer> optimizer;
  std::map<int, std::size_t> class_of_identity;
  TrainStats stats;
};

namespace detail {

struct TrainIndex {
  std::vector<int> identities;                                    // sorted
  std::map<int, std::size_t> class_of;                            // identity -> class label
  std::map<int, std::map<ModalityId, std::vector<std::size_t>>> samples;  // id -> mod -> sample idx
};

inline TrainIndex index_dataset(const SynthDataset& ds) {
  TrainIndex idx;
  for (std::size_t i = 0; i < ds.manifest.records.size(); ++i) {
    const SampleRecord& r = ds.manifest.records[i];
    idx.samples[r.id][r.modality].push_back(i);
  }
  for (const auto& [id, mods] : idx.samples) {
    for (ModalityId m : kAllModalities)
      if (!mods.count(m) || mods.at(m).empty())
        throw data_error("identity " + std::to_string(id) + " lacks samples of modality " + modality_name(m));
    idx.identities.push_back(id);
  }
  for (std::size_t i = 0; i < idx.identities.size(); ++i) idx.class_of[idx.identities[i]] = i;
  return idx;
}

}  // namespace detail

// One tuple per identity per step: every modality contributes one augmented
// sample, the towers produce z^R and the four query sequences, the feature
// mixture produces the 15 fused families, and the composite objective drives
// one Adam step. Deterministic for a fixed seed and config.
inline TrainedModel train_model(const RunConfig& rc, const SynthDataset& train_ds, std::ostream* log,
                                const std::string& checkpoint_dir = "", const std::string& digest_in = "") {
  detail::TrainIndex idx = detail::index_dataset(train_ds);
  const std::size_t n_classes = idx.identities.size();
  if (n_classes < 2) throw data_error("training needs at least two identities");

  TrainedModel out;
  out.model = std::make_shared<Reid5oModel>(rc, n_classes, rc.seed);
  out.optimizer = std::make_shared<AdamOptimizer>(AdamConfig{});
  out.model->visit_params([&](const std::string& name, Tensor& t, ParamGroup g) {
    out.optimizer->add_param(name, t, g);
  });
  out.class_of_identity = idx.class_of;

  const std::string digest = digest_in.empty() ? config_digest(rc) : digest_in;
  const ScheduleConfig schedule = schedule_config(rc);
  const AugmentConfig aug;
  Reid5oModel& model = *out.model;

  const std::size_t batches_per_pass =
      (idx.identities.size() + rc.batch_identities - 1) / rc.batch_identities;
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, rc.passes_per_epoch * batches_per_pass);

  auto emit = [&](const std::string& line) {
    out.stats.log_lines.push_back(line);
    if (log) (*log) << line << "\n";
  };

  std::size_t global_step = 0;
  for (std::size_t epoch = 0; epoch < rc.epochs; ++epoch) {
    std::size_t step_in_epoch = 0;
    for (std::size_t pass = 0; pass < rc.passes_per_epoch; ++pass) {
      std::vector<int> order = idx.identities;
      KeyedRng shuffle = KeyedRng::from({rc.seed, hash_str("shuffle"), epoch, pass});
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.next_below(i)]);

      for (std::size_t start = 0; start < order.size(); start += rc.batch_identities) {
        std::vector<int> batch(order.begin() + static_cast<long>(start),
                               order.begin() + static_cast<long>(std::min(order.size(), start + rc.batch_identities)));
        if (batch.size() < 2) continue;  // SDM needs at least two rows

        const double frac_epoch =
            static_cast<double>(epoch) + static_cast<double>(step_in_epoch) / static_cast<double>(steps_per_epoch);
        const GroupLr lr = lr_schedule(frac_epoch, schedule);

        Tape tape;
        TapeScope scope(tape);

        std::vector<Tensor> gallery_rows;
        std::map<ModalityCombo, std::vector<Tensor>> fused_rows;
        BatchPack pack;
        for (int id : batch) {
          std::map<ModalityId, Tensor> sequences;
          for (ModalityId mod : kAllModalities) {
            const auto& pool = idx.samples.at(id).at(mod);
            KeyedRng pick = KeyedRng::from({rc.seed, hash_str("pick"), epoch, pass,
                                            static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(mod)});
            const MixedSample& raw = train_ds.samples[pool[pick.next_below(pool.size())]];
            KeyedRng aug_rng = KeyedRng::from({rc.seed, hash_str("aug"), epoch, pass,
                                               static_cast<std::uint64_t>(id), static_cast<std::uint64_t>(mod)});
            const MixedSample sample = augment(raw, aug, rc.vocab, aug_rng);
            TowerSet::Encoded enc = model.encode_sample(sample);
            if (mod == ModalityId::R) {
              gallery_rows.push_back(enc.pooled);
            } else {
              sequences.emplace(mod, enc.sequence);
            }
          }
          for (const ModalityCombo& combo : enumerate_combos())
            fused_rows[combo].push_back(model.fm().fuse(sequences, combo).vector);
          pack.identities.push_back(id);
          pack.class_labels.push_back(idx.class_of.at(id));
        }
        pack.gallery = stack_rows(gallery_rows);
        for (auto& [combo, rows] : fused_rows) pack.fused.emplace(combo, stack_rows(rows));

        LossReport report = total_objective(pack, rc.alpha, rc.tau, model.classifier());
        out.optimizer->zero_grad();
        tape.backward(report.combined_tensor);
        out.optimizer->clip_global_norm(kGradClipNorm);
        out.optimizer->step(lr.base, lr.expert_fm);

        if (out.stats.steps == 0) out.stats.first_combined = report.combined;
        out.stats.final_combined = report.combined;
        ++out.stats.steps;
        ++step_in_epoch;
        ++global_step;

        std::ostringstream line;
        line << "epoch " << epoch << " step " << global_step << " sdm " << std::setprecision(10)
             << report.sdm_total << " ic " << report.ic_total << " total " << report.combined << " lr_base "
             << lr.base << " lr_expert_fm " << lr.expert_fm;
        emit(line.str());
      }
    }
    if (!checkpoint_dir.empty() && rc.checkpoint_every > 0 &&
        ((epoch + 1) % rc.checkpoint_every == 0 || epoch + 1 == rc.epochs)) {
      Checkpoint ckpt = model.to_checkpoint(digest);
      ckpt.has_optimizer = true;
      ckpt.optimizer_step = out.optimizer->step_count();
      for (const auto& slot : out.optimizer->slots()) {
        OptimizerSlotState s;
        s.m.assign(slot.m.begin(), slot.m.end());
        s.v.assign(slot.v.begin(), slot.v.end());
        ckpt.optimizer.emplace(slot.name, std::move(s));
      }
      const std::string path = (std::filesystem::path(checkpoint_dir) /
                                ("checkpoint_epoch" + std::to_string(epoch + 1) + ".rid5"))
                                   .string();
      save_checkpoint(ckpt, path);
      emit("checkpoint " + path);
    }
  }
  return out;
}

}  // namespace omreid
