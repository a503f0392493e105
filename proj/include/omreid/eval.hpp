#pragma once

#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "omreid/model.hpp"
#include "omreid/protocol.hpp"
#include "omreid/synthgen.hpp"

namespace omreid {

struct EvalOptions {
  std::uint64_t seed = 1;
  FusionMode fusion = FusionMode::Fm;
  SingletonMode singleton = SingletonMode::Fm;
};

// Runs the full retrieval protocol: RGB gallery embedding, the 32 query
// sets, ranking and CMC/mAP/mINP per set plus per-mode averages. Evaluation
// records no tape, so weights stay untouched.
inline MetricsReport evaluate_model(const Reid5oModel& model, const SynthDataset& test_ds,
                                    const EvalOptions& opts, const std::string& digest) {
  // encode every test sample once
  std::vector<TowerSet::Encoded> encoded(test_ds.samples.size());
  for (std::size_t i = 0; i < test_ds.samples.size(); ++i) encoded[i] = model.encode_sample(test_ds.samples[i]);

  std::vector<std::size_t> gallery_indices;
  std::vector<int> gallery_ids;
  for (std::size_t i = 0; i < test_ds.manifest.records.size(); ++i) {
    if (test_ds.manifest.records[i].modality != ModalityId::R) continue;
    gallery_indices.push_back(i);
    gallery_ids.push_back(test_ds.manifest.records[i].id);
  }
  if (gallery_indices.empty()) throw data_error("test split has no RGB gallery samples");
  std::vector<Tensor> gallery_rows;
  for (std::size_t gi : gallery_indices) gallery_rows.push_back(encoded[gi].pooled);
  const Tensor gallery = stack_rows(gallery_rows);

  // singleton embeddings, cached per sample index
  std::map<std::size_t, Tensor> singleton_cache;
  auto singleton_embedding = [&](std::size_t sample_idx, ModalityId mod) -> Tensor {
    auto it = singleton_cache.find(sample_idx);
    if (it != singleton_cache.end()) return it->second;
    Tensor v;
    if (opts.singleton == SingletonMode::Cls) {
      v = encoded[sample_idx].pooled;
    } else {
      std::map<ModalityId, Tensor> seq{{mod, encoded[sample_idx].sequence}};
      v = model.fm().fuse(seq, ModalityCombo({mod})).vector;
    }
    singleton_cache.emplace(sample_idx, v);
    return v;
  };

  MetricsReport report;
  report.seed = opts.seed;
  report.config_digest = digest;
  const std::vector<QuerySet> sets = build_query_sets(protocol_view(test_ds), opts.seed);

  for (const QuerySet& qs : sets) {
    std::vector<int> query_ids;
    std::vector<RankingList> rankings;
    if (opts.fusion == FusionMode::Superposition) {
      std::vector<std::map<ModalityId, Tensor>> tuples;
      for (const QueryTuple& t : qs.tuples) {
        std::map<ModalityId, Tensor> embeddings;
        for (const auto& [mod, sample_idx] : t.samples) embeddings.emplace(mod, singleton_embedding(sample_idx, mod));
        tuples.push_back(std::move(embeddings));
        query_ids.push_back(t.identity);
      }
      rankings = superposition_search(tuples, gallery);
    } else {
      const ModalityCombo combo = qs.combo();
      std::vector<Tensor> queries;
      for (const QueryTuple& t : qs.tuples) {
        if (qs.mode == 1 && opts.singleton == SingletonMode::Cls) {
          queries.push_back(encoded[t.samples.at(qs.primary)].pooled);
        } else {
          std::map<ModalityId, Tensor> sequences;
          for (const auto& [mod, sample_idx] : t.samples) sequences.emplace(mod, encoded[sample_idx].sequence);
          queries.push_back(model.fm().fuse(sequences, combo).vector);
        }
        query_ids.push_back(t.identity);
      }
      rankings = rank(queries, gallery);
    }
    QuerySetResult result;
    result.label = qs.label();
    result.mode = qs.mode;
    result.n_queries = qs.tuples.size();
    result.metrics = cmc_map_minp(rankings, query_ids, gallery_ids);
    report.per_set.push_back(std::move(result));
  }

  // arithmetic mean over each mode's query sets
  std::map<int, std::size_t> mode_counts;
  for (const QuerySetResult& r : report.per_set) {
    MetricsEntry& avg = report.mode_average[r.mode];
    for (const auto& [k, v] : r.metrics.cmc) avg.cmc[k] += v;
    avg.map += r.metrics.map;
    avg.minp += r.metrics.minp;
    mode_counts[r.mode]++;
  }
  for (auto& [mode, avg] : report.mode_average) {
    const double n = static_cast<double>(mode_counts[mode]);
    for (auto& [k, v] : avg.cmc) v /= n;
    avg.map /= n;
    avg.minp /= n;
  }
  return report;
}

inline nlohmann::json metrics_entry_json(const MetricsEntry& e) {
  nlohmann::json j;
  for (const auto& [k, v] : e.cmc) j["cmc" + std::to_string(k)] = v;
  j["map"] = e.map;
  j["minp"] = e.minp;
  return j;
}

inline nlohmann::json report_json(const MetricsReport& report, FusionMode fusion, SingletonMode singleton) {
  nlohmann::json j;
  j["seed"] = report.seed;
  j["config_digest"] = report.config_digest;
  j["fusion"] = to_string(fusion);
  j["singleton"] = to_string(singleton);
  j["query_sets"] = nlohmann::json::array();
  for (const QuerySetResult& r : report.per_set) {
    nlohmann::json e = metrics_entry_json(r.metrics);
    e["label"] = r.label;
    e["mode"] = r.mode;
    e["n_queries"] = r.n_queries;
    j["query_sets"].push_back(std::move(e));
  }
  j["mode_averages"] = nlohmann::json::object();
  for (const auto& [mode, avg] : report.mode_average)
    j["mode_averages"]["MM-" + std::to_string(mode)] = metrics_entry_json(avg);
  return j;
}

inline std::string report_table(const MetricsReport& report) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "query set        n     cmc@1   cmc@5   cmc@10  mAP     mINP\n";
  os << "-------------------------------------------------------------\n";
  for (const QuerySetResult& r : report.per_set) {
    os << std::left << std::setw(16) << r.label << std::right << std::setw(4) << r.n_queries;
    for (std::size_t k : cmc_ranks()) os << std::setw(8) << r.metrics.cmc.at(k);
    os << std::setw(8) << r.metrics.map << std::setw(8) << r.metrics.minp << "\n";
  }
  os << "-------------------------------------------------------------\n";
  for (const auto& [mode, avg] : report.mode_average) {
    os << std::left << std::setw(16) << ("MM-" + std::to_string(mode) + " average") << std::right << std::setw(4)
       << "";
    for (std::size_t k : cmc_ranks()) os << std::setw(8) << avg.cmc.at(k);
    os << std::setw(8) << avg.map << std::setw(8) << avg.minp << "\n";
  }
  os << "seed " << report.seed << "  config " << report.config_digest.substr(0, 12) << "\n";
  return os.str();
}

}  // namespace omreid
