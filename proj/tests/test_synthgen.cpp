#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <map>
#include <set>

#include "omreid/dataset_io.hpp"
#include "omreid/synthgen.hpp"

using namespace omreid;

namespace {

SynthConfig desk_config() {
  SynthConfig cfg;
  cfg.n_identities = 30;
  cfg.views_per_modality = 4;
  cfg.image_h = 32;
  cfg.image_w = 16;
  cfg.vocab_size = 64;
  cfg.seed = 1;
  return cfg;
}

// Mean pixel value per channel over all views of one identity+modality.
std::vector<double> mean_color(const SynthDataset& ds, int id, ModalityId mod) {
  std::vector<double> acc;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const SampleRecord& r = ds.manifest.records[i];
    if (r.id != id || r.modality != mod) continue;
    const Image& img = std::get<VisualSample>(ds.samples[i]).pixels;
    if (acc.empty()) acc.assign(img.c, 0.0);
    std::vector<double> m(img.c, 0.0);
    for (std::size_t y = 0; y < img.h; ++y)
      for (std::size_t x = 0; x < img.w; ++x)
        for (std::size_t ch = 0; ch < img.c; ++ch) m[ch] += img.at(y, x, ch);
    for (std::size_t ch = 0; ch < img.c; ++ch) acc[ch] += m[ch] / static_cast<double>(img.h * img.w);
    ++n;
  }
  for (double& v : acc) v /= static_cast<double>(n);
  return acc;
}

std::vector<std::vector<double>> per_view_colors(const SynthDataset& ds, int id, ModalityId mod) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const SampleRecord& r = ds.manifest.records[i];
    if (r.id != id || r.modality != mod) continue;
    const Image& img = std::get<VisualSample>(ds.samples[i]).pixels;
    std::vector<double> m(img.c, 0.0);
    for (std::size_t y = 0; y < img.h; ++y)
      for (std::size_t x = 0; x < img.w; ++x)
        for (std::size_t ch = 0; ch < img.c; ++ch) m[ch] += img.at(y, x, ch);
    for (double& v : m) v /= static_cast<double>(img.h * img.w);
    out.push_back(std::move(m));
  }
  return out;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Fraction of identity pairs whose views all fall on their own side of the
// nearest-centroid boundary in mean-color space.
double separable_pair_fraction(const SynthDataset& ds, ModalityId mod) {
  std::set<int> id_set;
  for (const SampleRecord& r : ds.manifest.records) id_set.insert(r.id);
  std::vector<int> ids(id_set.begin(), id_set.end());
  std::size_t separated = 0, pairs = 0;
  for (std::size_t a = 0; a < ids.size(); ++a) {
    for (std::size_t b = a + 1; b < ids.size(); ++b) {
      const auto ca = mean_color(ds, ids[a], mod);
      const auto cb = mean_color(ds, ids[b], mod);
      bool all_correct = true;
      for (const auto& v : per_view_colors(ds, ids[a], mod))
        if (sq_dist(v, ca) >= sq_dist(v, cb)) all_correct = false;
      for (const auto& v : per_view_colors(ds, ids[b], mod))
        if (sq_dist(v, cb) >= sq_dist(v, ca)) all_correct = false;
      separated += all_correct ? 1 : 0;
      ++pairs;
    }
  }
  return static_cast<double>(separated) / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("generation is deterministic per (seed, id, modality, view)") {
  SynthConfig cfg = desk_config();
  MixedSample a = make_sample(cfg, 7, ModalityId::C, 2);
  MixedSample b = make_sample(cfg, 7, ModalityId::C, 2);
  REQUIRE(payload_bytes(a) == payload_bytes(b));

  MixedSample t1 = make_sample(cfg, 3, ModalityId::T, 1);
  MixedSample t2 = make_sample(cfg, 3, ModalityId::T, 1);
  REQUIRE(std::get<TextSample>(t1).token_ids == std::get<TextSample>(t2).token_ids);

  cfg.seed = 2;
  MixedSample c = make_sample(cfg, 7, ModalityId::C, 2);
  REQUIRE(payload_bytes(a) != payload_bytes(c));
}

TEST_CASE("identities differing in one attribute differ only in its region") {
  SynthConfig cfg = desk_config();
  IdentitySpec base = make_identity_spec(0, cfg.seed);
  IdentitySpec changed = base;
  changed.torso_hue = (base.torso_hue + 3) % kHueCount;

  const ViewParams vp = make_view_params(cfg.seed, 0);
  const std::uint64_t noise_key = KeyedRng::from({cfg.seed, hash_str("noise.rgb"), 0ull}).key;
  Image a = render_rgb(base, vp, cfg.image_h, cfg.image_w, noise_key);
  Image b = render_rgb(changed, vp, cfg.image_h, cfg.image_w, noise_key);

  const std::size_t torso_y0 = static_cast<std::size_t>(FigureLayout::torso_top * cfg.image_h);
  const std::size_t torso_y1 = static_cast<std::size_t>(FigureLayout::torso_bottom * cfg.image_h);
  bool any_diff = false;
  for (std::size_t y = 0; y < a.h; ++y)
    for (std::size_t x = 0; x < a.w; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch) {
        if (a.at(y, x, ch) == b.at(y, x, ch)) continue;
        any_diff = true;
        REQUIRE(y >= torso_y0);
        REQUIRE(y < torso_y1);
      }
  REQUIRE(any_diff);
}

TEST_CASE("every identity covers all five modalities with matching counts") {
  SynthConfig cfg = desk_config();
  SynthDataset ds = generate(cfg);
  REQUIRE(ds.samples.size() == ds.manifest.records.size());
  std::map<int, std::set<ModalityId>> coverage;
  std::map<ModalityId, std::size_t> payload_counts;
  for (std::size_t i = 0; i < ds.manifest.records.size(); ++i) {
    coverage[ds.manifest.records[i].id].insert(ds.manifest.records[i].modality);
    payload_counts[sample_modality(ds.samples[i])]++;
  }
  REQUIRE(coverage.size() == cfg.n_identities);
  for (const auto& [id, mods] : coverage) REQUIRE(mods.size() == 5);
  for (ModalityId m : kAllModalities) {
    REQUIRE(ds.manifest.counts.at(m) == cfg.n_identities * cfg.views_per_modality);
    REQUIRE(payload_counts.at(m) == ds.manifest.counts.at(m));
  }
}

TEST_CASE("split is identity-disjoint and deterministic") {
  SynthConfig cfg = desk_config();
  SynthDataset ds = generate(cfg);
  auto [train, test] = split(ds.manifest, 2.0 / 3.0, cfg.seed);
  std::set<int> train_ids, test_ids;
  for (const SampleRecord& r : train.records) train_ids.insert(r.id);
  for (const SampleRecord& r : test.records) test_ids.insert(r.id);
  REQUIRE(train_ids.size() == 20);
  REQUIRE(test_ids.size() == 10);
  for (int id : train_ids) REQUIRE_FALSE(test_ids.count(id));

  auto [train2, test2] = split(ds.manifest, 2.0 / 3.0, cfg.seed);
  std::set<int> train_ids2;
  for (const SampleRecord& r : train2.records) train_ids2.insert(r.id);
  REQUIRE(train_ids == train_ids2);

  REQUIRE_THROWS_AS(split(ds.manifest, 0.0001, cfg.seed), config_error);
}

TEST_CASE("mean color separates identities on RGB but not on sketches") {
  SynthConfig cfg = desk_config();
  SynthDataset ds = generate(cfg);
  const double rgb_frac = separable_pair_fraction(ds, ModalityId::R);
  const double sk_frac = separable_pair_fraction(ds, ModalityId::S);
  INFO("rgb " << rgb_frac << " sk " << sk_frac);
  REQUIRE(rgb_frac >= 0.80);
  REQUIRE(sk_frac <= 0.55);
}

TEST_CASE("vocabulary too small for the templates is rejected") {
  SynthConfig cfg = desk_config();
  cfg.vocab_size = 16;
  REQUIRE_THROWS_AS(make_sample(cfg, 0, ModalityId::T, 0), config_error);
}

TEST_CASE("dataset round-trips through payload files and manifests") {
  SynthConfig cfg = desk_config();
  cfg.n_identities = 4;
  SynthDataset ds = generate(cfg);
  const std::filesystem::path dir = std::filesystem::temp_directory_path() / "omreid_synth_test";
  std::filesystem::remove_all(dir);
  write_dataset(ds, dir, 0.5);

  SynthDataset loaded = load_dataset(dir / "manifest.jsonl");
  REQUIRE(loaded.samples.size() == ds.samples.size());
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    REQUIRE(loaded.manifest.records[i].sha256 == ds.manifest.records[i].sha256);
    if (std::holds_alternative<TextSample>(ds.samples[i])) {
      REQUIRE(std::get<TextSample>(loaded.samples[i]).token_ids ==
              std::get<TextSample>(ds.samples[i]).token_ids);
    }
  }
  DatasetManifest train = read_manifest(dir / "train.jsonl");
  DatasetManifest test = read_manifest(dir / "test.jsonl");
  REQUIRE(train.records.size() + test.records.size() == ds.manifest.records.size());
  std::filesystem::remove_all(dir);
}
