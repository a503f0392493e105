#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "omreid/config.hpp"
#include "omreid/encoder.hpp"

using namespace omreid;

namespace {

const std::vector<ModalityId> kVisualExperts{ModalityId::R, ModalityId::I, ModalityId::C, ModalityId::S};

Tensor random_input(std::size_t n, std::size_t d, std::uint64_t seed) {
  KeyedRng rng = KeyedRng::from({seed, hash_str("input")});
  Tensor x({n, d});
  for (std::size_t i = 0; i < x.size(); ++i) x.at(i) = rng.next_gaussian();
  return x;
}

EncoderConfig small_visual_cfg() {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.rank = 2;
  cfg.projection_dim = 8;
  cfg.expert_modalities = kVisualExperts;
  return cfg;
}

EncoderConfig small_text_cfg() {
  EncoderConfig cfg = small_visual_cfg();
  cfg.rank = 0;
  cfg.expert_modalities.clear();
  return cfg;
}

}  // namespace

TEST_CASE("routed linear: inactive signal equals the base path bitwise") {
  RoutedLinear layer("lin", 8, 6, 2, kVisualExperts, 5);
  RoutedLinear base("lin", 8, 6, 0, {}, 5);  // same name+seed => identical W, b
  Tensor x = random_input(4, 8, 1);
  Tensor inactive = layer.forward(x, ControlSignal{ModalityId::I, false});
  Tensor plain = base.forward(x, ControlSignal{ModalityId::I, false});
  REQUIRE(inactive.vec() == plain.vec());
}

TEST_CASE("routed linear: zero-init experts leave outputs bitwise unchanged") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    RoutedLinear layer("lin", 8, 6, 2, kVisualExperts, seed);
    Tensor x = random_input(4, 8, seed);
    Tensor off = layer.forward(x, ControlSignal{ModalityId::C, false});
    Tensor on = layer.forward(x, ControlSignal{ModalityId::C, true});
    REQUIRE(off.vec() == on.vec());
  }
}

TEST_CASE("routed linear: routing locality") {
  RoutedLinear layer("lin", 8, 6, 2, kVisualExperts, 5);
  // give every expert mass so routing actually changes outputs
  for (ModalityId m : kVisualExperts) {
    Tensor& b = layer.expert_down(m);
    for (std::size_t i = 0; i < b.size(); ++i) b.at(i) = 0.01 * static_cast<double>(i + 1);
  }
  Tensor x = random_input(4, 8, 2);
  std::vector<double> c_before = layer.forward(x, ControlSignal{ModalityId::C, true}).vec();
  std::vector<double> i_before = layer.forward(x, ControlSignal{ModalityId::I, true}).vec();

  layer.expert_up(ModalityId::I).at(0) += 1.0;  // perturb expert I only
  REQUIRE(layer.forward(x, ControlSignal{ModalityId::C, true}).vec() == c_before);
  REQUIRE(layer.forward(x, ControlSignal{ModalityId::I, true}).vec() != i_before);

  RoutedLinear no_t("lin", 8, 6, 2, kVisualExperts, 5);
  REQUIRE_THROWS_AS(no_t.forward(x, ControlSignal{ModalityId::T, true}), data_error);
}

TEST_CASE("gradient isolation: inactive experts get exactly zero gradient") {
  TowerSet towers(small_visual_cfg(), small_text_cfg(), 7);
  Tensor tokens = random_input(5, 16, 3);

  Tape tape;
  TapeScope scope(tape);
  TowerSet::Encoded enc = towers.encode_one(tokens, ControlSignal{ModalityId::I, true});
  Tensor loss = sum(mul(enc.pooled, enc.pooled));
  towers.visit_params([](const std::string&, Tensor& t, ParamGroup) { t.zero_grad(); });
  tape.backward(loss);

  bool saw_active = false, saw_inactive = false;
  towers.visit_params([&](const std::string& name, Tensor& t, ParamGroup g) {
    if (g != ParamGroup::ExpertFm) return;
    const bool active_expert = name.find(".expert.ir.") != std::string::npos;
    double norm = 0.0;
    for (double v : t.grad_ref()) norm += std::abs(v);
    if (active_expert) {
      // B receives gradient through A at zero init; A's own gradient is
      // zero until B moves
      if (name.ends_with(".B")) {
        REQUIRE(norm > 0.0);
        saw_active = true;
      }
    } else {
      REQUIRE(norm == 0.0);
      saw_inactive = true;
    }
  });
  REQUIRE(saw_active);
  REQUIRE(saw_inactive);
}

TEST_CASE("zero-init equivalence holds through the whole encoder") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TowerSet towers(small_visual_cfg(), small_text_cfg(), seed);
    Tensor tokens = random_input(5, 16, seed + 100);
    for (ModalityId m : kVisualExperts) {
      TowerSet::Encoded on = towers.encode_one(tokens, ControlSignal{m, true});
      TowerSet::Encoded off = towers.encode_one(tokens, ControlSignal{m, false});
      REQUIRE(on.sequence.vec() == off.sequence.vec());
      REQUIRE(on.pooled.vec() == off.pooled.vec());
    }
  }
}

TEST_CASE("encoder routing locality end to end") {
  TowerSet towers(small_visual_cfg(), small_text_cfg(), 21);
  // push every expert away from zero
  towers.visit_params([](const std::string& name, Tensor& t, ParamGroup) {
    if (name.find(".expert.") != std::string::npos && name.ends_with(".B"))
      for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = 0.02 * static_cast<double>(i % 7);
  });
  Tensor tokens = random_input(5, 16, 4);
  std::vector<double> c_seq = towers.encode_one(tokens, ControlSignal{ModalityId::C, true}).sequence.vec();
  towers.visit_params([](const std::string& name, Tensor& t, ParamGroup) {
    if (name.find(".expert.ir.") != std::string::npos && name.ends_with(".A")) t.at(0) += 0.7;
  });
  REQUIRE(towers.encode_one(tokens, ControlSignal{ModalityId::C, true}).sequence.vec() == c_seq);
}

TEST_CASE("zero-layer encoder is the projected identity") {
  EncoderConfig vcfg = small_visual_cfg();
  vcfg.layers = 0;
  vcfg.rank = 0;
  vcfg.expert_modalities.clear();
  EncoderConfig tcfg = small_text_cfg();
  tcfg.layers = 0;
  TowerSet towers(vcfg, tcfg, 3);
  Tensor proj;
  towers.visit_params([&](const std::string& name, Tensor& t, ParamGroup) {
    if (name == "visual.projection") proj = t;
  });
  Tensor tokens = random_input(4, 16, 9);
  TowerSet::Encoded enc = towers.encode_one(tokens, ControlSignal{ModalityId::R, false});
  REQUIRE(enc.sequence.vec() == matmul(tokens, proj).vec());
}

TEST_CASE("identical inputs encode identically") {
  TowerSet towers(small_visual_cfg(), small_text_cfg(), 11);
  Tensor tokens = random_input(6, 16, 5);
  TowerSet::Encoded a = towers.encode_one(tokens, ControlSignal{ModalityId::S, true});
  TowerSet::Encoded b = towers.encode_one(tokens, ControlSignal{ModalityId::S, true});
  REQUIRE(a.pooled.vec() == b.pooled.vec());
  REQUIRE_FALSE(a.pooled.has_nonfinite());

  REQUIRE_THROWS_AS(towers.encode_one(random_input(4, 12, 1), ControlSignal{ModalityId::R, true}), dim_error);
}

TEST_CASE("encode gradients match finite differences") {
  EncoderConfig vcfg = small_visual_cfg();
  vcfg.layers = 1;
  TowerSet towers(vcfg, small_text_cfg(), 13);
  Tensor tokens = random_input(3, 16, 6);
  Tensor probe;
  towers.visit_params([&](const std::string& name, Tensor& t, ParamGroup) {
    if (name == "visual.block0.qkv.expert.ir.A") probe = t;
  });
  REQUIRE(probe.defined());
  auto f = [&](const Tensor&) {
    TowerSet::Encoded enc = towers.encode_one(tokens, ControlSignal{ModalityId::I, true});
    return sum(mul(enc.pooled, enc.pooled));
  };
  // perturbing B off zero so the expert path carries signal
  towers.visit_params([](const std::string& name, Tensor& t, ParamGroup) {
    if (name.find(".expert.ir.") != std::string::npos && name.ends_with(".B"))
      for (std::size_t i = 0; i < t.size(); ++i) t.at(i) = 0.05 * static_cast<double>((i % 5) + 1);
  });
  GradCheckReport r = grad_check(f, probe);
  REQUIRE(r.passed(1e-4));
}

TEST_CASE("expert parameter count reproduces the published table") {
  EncoderConfig clip_b16;
  clip_b16.layers = 12;
  clip_b16.width = 768;
  clip_b16.heads = 12;
  clip_b16.mlp_ratio = 4;
  clip_b16.fused_qkv = true;
  clip_b16.projection_dim = 512;

  const std::size_t n_experts = 4;
  struct Row {
    std::size_t r;
    std::size_t exact;
    double millions;
  };
  for (const Row& row : {Row{4, 2359296, 2.36}, Row{8, 4718592, 4.72}, Row{16, 9437184, 9.44},
                         Row{32, 18874368, 18.87}}) {
    clip_b16.rank = row.r;
    const std::size_t got = count_expert_params(clip_b16, n_experts);
    REQUIRE(got == row.exact);
    REQUIRE(std::round(static_cast<double>(got) / 1e6 * 100.0) / 100.0 == row.millions);
  }

  // doubling r exactly doubles the count
  clip_b16.rank = 5;
  const std::size_t five = count_expert_params(clip_b16, n_experts);
  clip_b16.rank = 10;
  REQUIRE(count_expert_params(clip_b16, n_experts) == 2 * five);
}

TEST_CASE("expert flop count matches a hand-summed per-layer tally") {
  EncoderConfig desk = small_visual_cfg();  // layers 2, width 16, mlp 4, rank 2, fused qkv
  const std::size_t tokens = 9;
  // per layer, per token: r*(d + 3d) + r*(d + d) + r*(d + 4d) + r*(4d + d)
  const std::size_t d = desk.width, r = desk.rank;
  const std::size_t per_token_per_layer = r * (d + 3 * d) + r * (d + d) + r * (d + 4 * d) + r * (4 * d + d);
  const std::size_t hand_tally = 2 * tokens * desk.layers * per_token_per_layer;
  REQUIRE(count_expert_flops(desk, tokens) == hand_tally);

  EncoderConfig no_rank = desk;
  no_rank.rank = 0;
  REQUIRE(count_expert_flops(no_rank, tokens) == 0);

  EncoderConfig doubled = desk;
  doubled.rank = 2 * desk.rank;
  REQUIRE(count_expert_flops(doubled, tokens) == 2 * count_expert_flops(desk, tokens));
}

TEST_CASE("expert rank bound is enforced") {
  REQUIRE_THROWS_AS(RoutedLinear("lin", 8, 6, 4, kVisualExperts, 1), config_error);
}
