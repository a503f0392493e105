#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "omreid/fusion.hpp"

namespace omreid {

using Rational = boost::multiprecision::cpp_rational;

// ---------------------------------------------------------------------------
// query-set construction
// ---------------------------------------------------------------------------

// A lightweight view of one test-split sample: `index` points back into the
// caller's sample store.
struct ProtocolSample {
  ModalityId modality = ModalityId::R;
  int identity = -1;
  std::size_t index = 0;
};

struct QueryTuple {
  std::map<ModalityId, std::size_t> samples;  // modality -> sample index
  int identity = -1;
};

struct QuerySet {
  int mode = 1;  // MM-k
  ModalityId primary = ModalityId::I;
  std::vector<ModalityId> supplements;  // canonical order, |supplements| = mode-1
  std::vector<QueryTuple> tuples;

  ModalityCombo combo() const {
    std::vector<ModalityId> members = supplements;
    members.push_back(primary);
    return ModalityCombo(members);
  }

  std::string label() const {
    std::string s = "MM-" + std::to_string(mode) + ":" + std::string(1, modality_letter(primary));
    for (ModalityId m : supplements) s += std::string("+") + modality_letter(m);
    return s;
  }
};

// Builds the 32 query sets of the four search modes: each query modality is
// a primary on its own (MM-1), with every single supplement (MM-2), every
// supplement pair (MM-3) and the full remaining triple (MM-4). Supplements
// are drawn uniformly per primary sample from same-identity samples.
inline std::vector<QuerySet> build_query_sets(const std::vector<ProtocolSample>& test_samples,
                                              std::uint64_t seed) {
  std::map<ModalityId, std::vector<std::size_t>> by_modality;  // positions in test_samples
  std::map<int, std::map<ModalityId, std::vector<std::size_t>>> by_identity;
  for (std::size_t i = 0; i < test_samples.size(); ++i) {
    by_modality[test_samples[i].modality].push_back(i);
    by_identity[test_samples[i].identity][test_samples[i].modality].push_back(i);
  }
  for (ModalityId m : kAllModalities)
    if (!by_modality.count(m))
      throw data_error("test split has no samples of modality " + modality_name(m));

  auto supplement_choices = [&](ModalityId primary) {
    std::vector<ModalityId> others;
    for (ModalityId m : kQueryModalities)
      if (m != primary) others.push_back(m);
    std::vector<std::vector<ModalityId>> per_mode[3];  // MM-2, MM-3, MM-4
    for (ModalityId o : others) per_mode[0].push_back({o});
    for (std::size_t i = 0; i < others.size(); ++i)
      for (std::size_t j = i + 1; j < others.size(); ++j) per_mode[1].push_back({others[i], others[j]});
    per_mode[2].push_back(others);
    return std::vector<std::vector<std::vector<ModalityId>>>{per_mode[0], per_mode[1], per_mode[2]};
  };

  auto make_set = [&](int mode, ModalityId primary, const std::vector<ModalityId>& supplements) {
    QuerySet qs;
    qs.mode = mode;
    qs.primary = primary;
    qs.supplements = supplements;
    std::uint64_t supp_mask = 0;
    for (ModalityId s : supplements) supp_mask |= (1ull << static_cast<unsigned>(s));
    std::size_t tuple_idx = 0;
    for (std::size_t pos : by_modality[primary]) {
      const ProtocolSample& p = test_samples[pos];
      QueryTuple tuple;
      tuple.identity = p.identity;
      tuple.samples[primary] = test_samples[pos].index;
      for (ModalityId s : supplements) {
        const auto& pools = by_identity[p.identity];
        auto it = pools.find(s);
        if (it == pools.end() || it->second.empty())
          throw data_error("identity " + std::to_string(p.identity) + " has no sample of modality " +
                           modality_name(s));
        KeyedRng rng = KeyedRng::from({seed, hash_str("queryset"), static_cast<std::uint64_t>(mode),
                                       static_cast<std::uint64_t>(primary), supp_mask,
                                       static_cast<std::uint64_t>(tuple_idx),
                                       static_cast<std::uint64_t>(s)});
        const std::size_t pick = static_cast<std::size_t>(rng.next_below(it->second.size()));
        tuple.samples[s] = test_samples[it->second[pick]].index;
      }
      qs.tuples.push_back(std::move(tuple));
      ++tuple_idx;
    }
    return qs;
  };

  std::vector<QuerySet> sets;
  for (ModalityId primary : kQueryModalities) sets.push_back(make_set(1, primary, {}));
  for (int mode = 2; mode <= 4; ++mode) {
    for (ModalityId primary : kQueryModalities) {
      const auto choices = supplement_choices(primary);
      for (const auto& supp : choices[mode - 2]) sets.push_back(make_set(mode, primary, supp));
    }
  }
  return sets;
}

// ---------------------------------------------------------------------------
// ranking
// ---------------------------------------------------------------------------

struct RankingList {
  std::size_t query_index = 0;
  std::vector<std::size_t> order;    // gallery indices, descending affinity
  std::vector<double> affinities;    // aligned with order
};

namespace detail {

inline std::vector<double> unit_vector(const double* v, std::size_t d, const char* what) {
  double norm = 0.0;
  for (std::size_t i = 0; i < d; ++i) norm += v[i] * v[i];
  norm = std::sqrt(norm);
  if (norm < 1e-12) throw numeric_error(std::string(what) + " has zero norm; cosine affinity undefined");
  std::vector<double> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = v[i] / norm;
  return out;
}

inline RankingList rank_row(std::size_t query_index, const std::vector<double>& affinity) {
  RankingList rl;
  rl.query_index = query_index;
  rl.order.resize(affinity.size());
  for (std::size_t g = 0; g < affinity.size(); ++g) rl.order[g] = g;
  std::sort(rl.order.begin(), rl.order.end(), [&](std::size_t a, std::size_t b) {
    if (affinity[a] != affinity[b]) return affinity[a] > affinity[b];
    return a < b;  // ties broken by ascending gallery index
  });
  rl.affinities.reserve(affinity.size());
  for (std::size_t g : rl.order) rl.affinities.push_back(affinity[g]);
  return rl;
}

}  // namespace detail

inline std::vector<double> cosine_row(const Tensor& query, const Tensor& gallery) {
  if (query.rank() != 1 || gallery.rank() != 2 || gallery.dim(1) != query.dim(0))
    throw dim_error("cosine_row expects a [D] query and [G x D] gallery");
  if (gallery.dim(0) == 0) throw data_error("empty gallery");
  const std::size_t d = query.dim(0);
  std::vector<double> qn = detail::unit_vector(query.data(), d, "query");
  std::vector<double> row(gallery.dim(0));
  for (std::size_t g = 0; g < gallery.dim(0); ++g) {
    std::vector<double> gn = detail::unit_vector(gallery.data() + g * d, d, "gallery vector");
    double dot = 0.0;
    for (std::size_t i = 0; i < d; ++i) dot += qn[i] * gn[i];
    row[g] = dot;
  }
  return row;
}

// Gallery items sorted by descending cosine affinity with each query.
inline std::vector<RankingList> rank(const std::vector<Tensor>& queries, const Tensor& gallery) {
  std::vector<RankingList> out;
  out.reserve(queries.size());
  for (std::size_t qi = 0; qi < queries.size(); ++qi)
    out.push_back(detail::rank_row(qi, cosine_row(queries[qi], gallery)));
  return out;
}

// The similarity-superposition baseline: per-modality cosine rows are summed
// elementwise, then ranked. With a single modality this is exactly rank().
inline std::vector<RankingList> superposition_search(const std::vector<std::map<ModalityId, Tensor>>& queries,
                                                     const Tensor& gallery) {
  std::vector<RankingList> out;
  out.reserve(queries.size());
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    if (queries[qi].empty()) throw data_error("query tuple " + std::to_string(qi) + " has no modalities");
    std::vector<double> total(gallery.dim(0), 0.0);
    for (const auto& [m, emb] : queries[qi]) {
      std::vector<double> row = cosine_row(emb, gallery);
      for (std::size_t g = 0; g < row.size(); ++g) total[g] += row[g];
    }
    out.push_back(detail::rank_row(qi, total));
  }
  return out;
}

// ---------------------------------------------------------------------------
// metrics
// ---------------------------------------------------------------------------

inline const std::vector<std::size_t>& cmc_ranks() {
  static const std::vector<std::size_t> ks = {1, 5, 10};
  return ks;
}

struct MetricsEntry {
  std::map<std::size_t, double> cmc;  // k -> CMC@k
  double map = 0.0;
  double minp = 0.0;
};

struct QuerySetResult {
  std::string label;
  int mode = 1;
  std::size_t n_queries = 0;
  MetricsEntry metrics;
};

struct MetricsReport {
  std::vector<QuerySetResult> per_set;
  std::map<int, MetricsEntry> mode_average;
  std::uint64_t seed = 0;
  std::string config_digest;
};

// CMC/mAP/mINP over one query set. All per-query quantities are accumulated
// in exact rational arithmetic and converted to double once at the end, so
// results are reproducible to the bit and comparable against brute-force
// oracles by equality.
inline MetricsEntry cmc_map_minp(const std::vector<RankingList>& rankings, const std::vector<int>& query_ids,
                                 const std::vector<int>& gallery_ids) {
  if (rankings.size() != query_ids.size()) throw dim_error("ranking/query count mismatch");
  if (rankings.empty()) throw data_error("no queries to score");
  Rational map_sum = 0, minp_sum = 0;
  std::map<std::size_t, Rational> cmc_hits;
  for (std::size_t k : cmc_ranks()) cmc_hits[k] = 0;
  for (std::size_t qi = 0; qi < rankings.size(); ++qi) {
    const RankingList& rl = rankings[qi];
    if (rl.order.size() != gallery_ids.size()) throw dim_error("ranking does not cover the gallery");
    std::size_t relevant = 0;
    std::size_t first_hit = 0, last_hit = 0;
    Rational ap_sum = 0;
    for (std::size_t pos = 0; pos < rl.order.size(); ++pos) {
      if (gallery_ids[rl.order[pos]] != query_ids[qi]) continue;
      ++relevant;
      const std::size_t rank_1based = pos + 1;
      if (relevant == 1) first_hit = rank_1based;
      last_hit = rank_1based;
      ap_sum += Rational(relevant, rank_1based);  // precision at this relevant item
    }
    if (relevant == 0)
      throw data_error("query identity " + std::to_string(query_ids[qi]) + " absent from gallery");
    map_sum += ap_sum / relevant;
    minp_sum += Rational(relevant, last_hit);
    for (std::size_t k : cmc_ranks())
      if (first_hit <= k) cmc_hits[k] += 1;
  }
  const Rational n(rankings.size());
  MetricsEntry entry;
  for (std::size_t k : cmc_ranks()) entry.cmc[k] = (cmc_hits[k] / n).convert_to<double>();
  entry.map = (map_sum / n).convert_to<double>();
  entry.minp = (minp_sum / n).convert_to<double>();
  return entry;
}

// ---------------------------------------------------------------------------
// text statistics
// ---------------------------------------------------------------------------

struct EntropyReport {
  std::vector<double> per_text;  // bits
  double mean = 0.0;
};

// Shannon entropy of each word sequence over its own word-frequency
// distribution, in bits, plus the corpus mean.
inline EntropyReport text_entropy(const std::vector<std::vector<std::size_t>>& texts) {
  if (texts.empty()) throw data_error("no texts to score");
  EntropyReport report;
  for (std::size_t t = 0; t < texts.size(); ++t) {
    const auto& words = texts[t];
    if (words.empty()) throw data_error("text " + std::to_string(t) + " is empty");
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t w : words) ++counts[w];
    const double len = static_cast<double>(words.size());
    double h = 0.0;
    for (const auto& [w, c] : counts) {
      const double p = static_cast<double>(c) / len;
      h -= p * std::log2(p);
    }
    report.per_text.push_back(h);
    report.mean += h;
  }
  report.mean /= static_cast<double>(report.per_text.size());
  return report;
}

// Drops the begin/end flags from a stored token line, leaving the word events.
inline std::vector<std::size_t> strip_flags(const std::vector<std::size_t>& ids) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i == 0 && ids[i] == kBosId) continue;
    if (i + 1 == ids.size() && ids[i] == kEosId) continue;
    out.push_back(ids[i]);
  }
  return out;
}

}  // namespace omreid
