#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "omreid/config.hpp"
#include "omreid/objective.hpp"

using namespace omreid;

namespace {

Tensor rows(std::vector<std::vector<double>> data) {
  Tensor t({data.size(), data[0].size()});
  for (std::size_t i = 0; i < data.size(); ++i)
    for (std::size_t j = 0; j < data[0].size(); ++j) t.at(i, j) = data[i][j];
  return t;
}

Tensor random_rows(std::size_t n, std::size_t d, std::uint64_t seed) {
  KeyedRng rng = KeyedRng::from({seed});
  Tensor t({n, d});
  for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = rng.next_gaussian();
  return t;
}

}  // namespace

TEST_CASE("sdm vanishes for aligned orthogonal pairs at small tau") {
  Tensor queries = rows({{1, 0, 0}, {0, 1, 0}});
  Tensor targets = rows({{1, 0, 0}, {0, 1, 0}});
  const double loss = sdm_loss(queries, targets, {0, 1}, 0.02).item();
  REQUIRE(loss >= 0.0);
  REQUIRE(loss < 1e-3);
}

TEST_CASE("sdm closed form for fully ambiguous embeddings") {
  // all vectors identical, two identities: predicted rows are uniform, the
  // match distribution is one-hot, so each direction costs
  //   KL(one-hot || uniform) = ln 2
  Tensor same = rows({{1, 1, 0}, {1, 1, 0}});
  const double loss = sdm_loss(same, same, {0, 1}, 0.02).item();
  REQUIRE(loss == Catch::Approx(std::log(2.0)).margin(1e-9));
}

TEST_CASE("sdm is invariant to positive rescaling (cosine)") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Tensor q = random_rows(6, 8, seed);
    Tensor t = random_rows(6, 8, seed + 100);
    std::vector<int> labels = {0, 1, 2, 0, 1, 2};
    const double base = sdm_loss(q, t, labels, 0.02).item();
    Tensor q_scaled = scale(q, 3.7);
    Tensor t_scaled = scale(t, 0.04);
    REQUIRE(sdm_loss(q_scaled, t, labels, 0.02).item() == Catch::Approx(base).margin(1e-9));
    REQUIRE(sdm_loss(q, t_scaled, labels, 0.02).item() == Catch::Approx(base).margin(1e-9));
    REQUIRE(base >= 0.0);
  }
}

TEST_CASE("sdm rejects rows without positives") {
  Tensor q = random_rows(2, 4, 1);
  Tensor t = random_rows(2, 4, 2);
  REQUIRE_THROWS_AS(sdm_loss(q, t, {0, 1}, {2, 3}, 0.02), data_error);
  REQUIRE_THROWS_AS(sdm_loss(random_rows(1, 4, 3), random_rows(1, 4, 4), {0}, 0.02), dim_error);
}

TEST_CASE("identity classification analytic values") {
  // zero-initialized classifier emits uniform logits
  IdentityClassifier clf600(4, 600, 1);
  std::vector<double> zeros(4, 0.0);
  Tensor rep({4}, zeros);
  // zero the classifier weights to force exactly uniform logits
  clf600.visit_params([](const std::string&, Tensor& t, ParamGroup) {
    for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = 0.0;
  });
  REQUIRE(ic_loss(rep, 17, clf600).item() == Catch::Approx(std::log(600.0)).margin(1e-12));
  REQUIRE(std::log(600.0) == Catch::Approx(6.3969).margin(1e-4));

  IdentityClassifier clf20(4, 20, 1);
  clf20.visit_params([](const std::string&, Tensor& t, ParamGroup) {
    for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = 0.0;
  });
  REQUIRE(ic_loss(rep, 3, clf20).item() == Catch::Approx(std::log(20.0)).margin(1e-12));
  REQUIRE(std::log(20.0) == Catch::Approx(2.9957).margin(1e-4));

  // a correct-class logit at margin 10 drives the loss under 0.01
  Tensor logits({20});
  logits.at(7) = 10.0;
  REQUIRE(cross_entropy(logits, {7}).item() < 0.01);

  REQUIRE_THROWS_AS(ic_loss(rep, 25, clf20), data_error);
}

TEST_CASE("composite objective decomposes exactly") {
  const std::size_t p = 4, d = 8;
  IdentityClassifier clf(d, p, 9);
  BatchPack pack;
  pack.gallery = random_rows(p, d, 500);
  for (std::size_t i = 0; i < p; ++i) {
    pack.identities.push_back(static_cast<int>(i) + 40);
    pack.class_labels.push_back(i);
  }
  std::uint64_t seed = 600;
  for (const ModalityCombo& combo : enumerate_combos()) pack.fused.emplace(combo, random_rows(p, d, seed++));

  for (double alpha : {0.0, 0.5, 1.0, 2.0}) {
    LossReport report = total_objective(pack, alpha, 0.02, clf);
    REQUIRE(report.sdm_per_combo.size() == 15);
    REQUIRE(report.ic_per_family.size() == 16);
    REQUIRE(std::abs(report.combined - (report.sdm_total + alpha * report.ic_total)) <= 1e-9);
    double sdm_sum = 0.0, ic_sum = 0.0;
    for (const auto& [label, v] : report.sdm_per_combo) sdm_sum += v;
    for (const auto& [label, v] : report.ic_per_family) ic_sum += v;
    REQUIRE(report.sdm_total == Catch::Approx(sdm_sum).margin(1e-9));
    REQUIRE(report.ic_total == Catch::Approx(ic_sum).margin(1e-9));
    if (alpha == 0.0) REQUIRE(report.combined == report.sdm_total);
    REQUIRE(report.sdm_total >= 0.0);
  }
  REQUIRE_THROWS_AS(total_objective(pack, -1.0, 0.02, clf), config_error);

  pack.fused.erase(pack.fused.begin()->first);
  REQUIRE_THROWS_AS(total_objective(pack, 1.0, 0.02, clf), data_error);
}

TEST_CASE("paper defaults: alpha 1.0, expert lr 5e-5 over base 1e-5") {
  RunConfig full = preset_config("full");
  REQUIRE(full.alpha == 1.0);
  REQUIRE(full.lr_base == 1e-5);
  REQUIRE(full.lr_expert_fm == 5e-5);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor p({3}, {1.0, -2.0, 0.5});
  std::vector<double> g(3, 0.0), m(3, 0.0), v(3, 0.0);
  adam_update(p, g, m, v, 1, 0.1, AdamConfig{});
  REQUIRE(p.vec() == std::vector<double>{1.0, -2.0, 0.5});
  std::vector<double> bad(2, 0.0);
  REQUIRE_THROWS_AS(adam_update(p, bad, m, v, 1, 0.1, AdamConfig{}), dim_error);
}

TEST_CASE("adam: constant gradient drives update magnitude toward lr") {
  const double lr = 1e-3, g = 0.37;
  Tensor p({1}, std::vector<double>{0.0});
  std::vector<double> grad{g}, m{0.0}, v{0.0};
  double prev = p.at(0);
  double last_update = 0.0;
  for (std::size_t step = 1; step <= 500; ++step) {
    adam_update(p, grad, m, v, step, lr, AdamConfig{});
    last_update = std::abs(p.at(0) - prev);
    prev = p.at(0);
  }
  REQUIRE(last_update == Catch::Approx(lr).epsilon(0.05));
}

TEST_CASE("lr schedule warms up linearly then stays constant") {
  ScheduleConfig full;  // paper constants
  REQUIRE(lr_schedule(0.0, full).base == Catch::Approx(1e-6).margin(1e-18));
  REQUIRE(lr_schedule(2.5, full).base == Catch::Approx(5.5e-6).margin(1e-18));
  REQUIRE(lr_schedule(5.0, full).base == Catch::Approx(1e-5).margin(1e-18));
  REQUIRE(lr_schedule(30.0, full).base == Catch::Approx(1e-5).margin(1e-18));
  REQUIRE(lr_schedule(5.0, full).expert_fm == Catch::Approx(5e-5).margin(1e-18));
  // the warmup factor applies to both groups
  REQUIRE(lr_schedule(0.0, full).expert_fm == Catch::Approx(5e-6).margin(1e-18));
  REQUIRE_THROWS_AS(lr_schedule(-1.0, full), config_error);
}

TEST_CASE("horizontal flip is an involution") {
  KeyedRng rng = KeyedRng::from({90});
  Image img(8, 6, 3);
  for (double& v : img.pix) v = rng.next_double();
  REQUIRE(hflip(hflip(img)) == img);
}

TEST_CASE("pad-crop at the center offset restores the original") {
  KeyedRng rng = KeyedRng::from({91});
  Image img(8, 6, 1);
  for (double& v : img.pix) v = rng.next_double();
  REQUIRE(pad_crop(img, 4, 4, 4) == img);
  REQUIRE_THROWS_AS(pad_crop(img, 4, 9, 0), data_error);
}

TEST_CASE("augmentation is deterministic under a fixed stream") {
  AugmentConfig cfg;
  VisualSample s;
  s.modality = ModalityId::R;
  s.pixels = Image(16, 8, 3);
  KeyedRng fill = KeyedRng::from({92});
  for (double& v : s.pixels.pix) v = fill.next_double();

  KeyedRng r1 = KeyedRng::from({1, 2, 3});
  KeyedRng r2 = KeyedRng::from({1, 2, 3});
  VisualSample a = augment(s, cfg, r1);
  VisualSample b = augment(s, cfg, r2);
  REQUIRE(a.pixels == b.pixels);
}

TEST_CASE("text augmentation alters about 15 percent of word tokens") {
  AugmentConfig cfg;
  const std::size_t vocab = 64;
  TextSample text;
  text.token_ids = {kBosId, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21, kEosId};
  const std::size_t words = text.token_ids.size() - 2;

  std::size_t altered = 0, total = 0, masked = 0;
  KeyedRng rng = KeyedRng::from({93});
  const std::size_t trials = 30000 / words + 1;
  for (std::size_t trial = 0; trial < trials; ++trial) {
    TextSample out = augment(text, cfg, vocab, rng);
    REQUIRE(out.token_ids.front() == kBosId);
    REQUIRE(out.token_ids.back() == kEosId);
    for (std::size_t i = 1; i + 1 < out.token_ids.size(); ++i) {
      altered += out.token_ids[i] != text.token_ids[i] ? 1 : 0;
      masked += out.token_ids[i] == kMaskId ? 1 : 0;
      ++total;
    }
  }
  const double frac = static_cast<double>(altered) / static_cast<double>(total);
  REQUIRE(std::abs(frac - 0.15) <= 0.01);
  // masked tokens dominate replacements 4:1
  const double mask_frac = static_cast<double>(masked) / static_cast<double>(altered);
  REQUIRE(mask_frac == Catch::Approx(0.8).margin(0.05));
}
