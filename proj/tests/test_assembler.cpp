#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "omreid/config.hpp"
#include "omreid/tokenizer.hpp"

using namespace omreid;

namespace {

AssemblerConfig desk_assembler() {
  AssemblerConfig cfg;
  cfg.image_h = 32;
  cfg.image_w = 16;
  cfg.patch = 8;
  cfg.visual_width = 24;
  cfg.vocab_size = 64;
  cfg.max_text_len = 24;
  cfg.text_width = 24;
  return cfg;
}

VisualSample make_visual(ModalityId mod, const AssemblerConfig& cfg, double fill, int identity = 0) {
  VisualSample s;
  s.modality = mod;
  s.pixels = Image(cfg.image_h, cfg.image_w, modality_channels(mod), fill);
  s.identity = identity;
  return s;
}

}  // namespace

TEST_CASE("token count law n = (H/P)(W/P) + 1") {
  struct Case {
    std::size_t h, w, p, expect;
  };
  // full-scale 384x128/16 -> 193; desk 32x16/8 -> 9
  for (const Case& c : {Case{384, 128, 16, 193}, Case{32, 16, 8, 9}, Case{64, 64, 8, 65},
                        Case{48, 16, 8, 13}, Case{16, 16, 16, 2}, Case{96, 32, 32, 4}}) {
    AssemblerConfig cfg;
    cfg.image_h = c.h;
    cfg.image_w = c.w;
    cfg.patch = c.p;
    cfg.visual_width = 16;
    VisualTokenizer tok(ModalityId::R, cfg, 1);
    REQUIRE(tok.token_count() == c.expect);
    REQUIRE(tok.token_count() == (c.h / c.p) * (c.w / c.p) + 1);
    VisualSample s = make_visual(ModalityId::R, cfg, 0.3);
    TokenBatch batch = tok.tokenize(s);
    REQUIRE(batch.embeddings[0].dim(0) == c.expect);
    REQUIRE(batch.lengths[0] == c.expect);
  }
  AssemblerConfig bad = desk_assembler();
  bad.patch = 12;  // 16 % 12 != 0
  REQUIRE_THROWS_AS(VisualTokenizer(ModalityId::R, bad, 1), config_error);
}

TEST_CASE("all-zero image yields identical patch tokens pre-position") {
  AssemblerConfig cfg = desk_assembler();
  Assembler assembler(cfg, 3);
  VisualSample zero = make_visual(ModalityId::R, cfg, 0.0);

  Tensor pos;
  assembler.visit_params([&](const std::string& name, Tensor& t, ParamGroup) {
    if (name == "tok.rgb.pos") pos = t;
  });
  REQUIRE(pos.defined());

  // with positions silenced, every patch token of a constant image is
  // identical
  std::vector<double> saved_pos = pos.vec();
  for (std::size_t i = 0; i < pos.size(); ++i) pos.at(i) = 0.0;
  Tensor flat_tokens = assembler.visual(ModalityId::R).tokenize(zero).embeddings[0];
  const std::size_t n = flat_tokens.dim(0), d = flat_tokens.dim(1);
  REQUIRE(pos.dim(0) == n);  // table covers every position
  for (std::size_t i = 2; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) REQUIRE(flat_tokens.at(i, j) == flat_tokens.at(1, j));
  pos.vec() = saved_pos;

  // position embeddings then make the rows distinct
  Tensor tokens = assembler.visual(ModalityId::R).tokenize(zero).embeddings[0];
  bool any_row_differs = false;
  for (std::size_t i = 2; i < n && !any_row_differs; ++i)
    for (std::size_t j = 0; j < d; ++j)
      if (tokens.at(i, j) != tokens.at(1, j)) any_row_differs = true;
  REQUIRE(any_row_differs);
}

TEST_CASE("text tokenization validates ids, flags and length") {
  AssemblerConfig cfg = desk_assembler();
  TextTokenizer tok(cfg, 5);

  TextSample ok;
  ok.token_ids = {kBosId, 7, kEosId};
  TokenBatch batch = tok.tokenize(ok);
  REQUIRE(batch.embeddings[0].dim(0) == 3);
  REQUIRE(batch.control.modality == ModalityId::T);
  REQUIRE(batch.control.active);

  // identical sequences tokenize to bitwise-identical embeddings
  TokenBatch batch2 = tok.tokenize(ok);
  REQUIRE(batch.embeddings[0].vec() == batch2.embeddings[0].vec());

  TextSample oov;
  oov.token_ids = {kBosId, 99, kEosId};
  REQUIRE_THROWS_AS(tok.tokenize(oov), data_error);

  TextSample overlong;
  overlong.token_ids.assign(cfg.max_text_len + 1, 5);
  overlong.token_ids.front() = kBosId;
  overlong.token_ids.back() = kEosId;
  REQUIRE_THROWS_AS(tok.tokenize(overlong), data_error);

  TextSample no_flags;
  no_flags.token_ids = {7, 8, 9};
  REQUIRE_THROWS_AS(tok.tokenize(no_flags), data_error);
}

TEST_CASE("full-scale text limit is 77") {
  RunConfig full = preset_config("full");
  REQUIRE(assembler_config(full).max_text_len == 77);
}

TEST_CASE("tokenizers are not shared across modalities") {
  AssemblerConfig cfg = desk_assembler();
  Assembler assembler(cfg, 9);
  std::map<ModalityId, std::vector<double>> before;
  for (ModalityId m : {ModalityId::R, ModalityId::I, ModalityId::C, ModalityId::S})
    before[m] = assembler.visual(m).tokenize(make_visual(m, cfg, 0.4)).embeddings[0].vec();
  TextSample text;
  text.token_ids = {kBosId, 5, 6, kEosId};
  std::vector<double> text_before = assembler.text().tokenize(text).embeddings[0].vec();

  assembler.visit_params([&](const std::string& name, Tensor& t, ParamGroup) {
    if (name == "tok.rgb.proj") t.at(0) += 0.5;
  });

  REQUIRE(assembler.visual(ModalityId::R).tokenize(make_visual(ModalityId::R, cfg, 0.4)).embeddings[0].vec() !=
          before[ModalityId::R]);
  for (ModalityId m : {ModalityId::I, ModalityId::C, ModalityId::S})
    REQUIRE(assembler.visual(m).tokenize(make_visual(m, cfg, 0.4)).embeddings[0].vec() == before[m]);
  REQUIRE(assembler.text().tokenize(text).embeddings[0].vec() == text_before);
}

TEST_CASE("assemble groups by modality in canonical order") {
  AssemblerConfig cfg = desk_assembler();
  Assembler assembler(cfg, 2);

  TextSample text;
  text.token_ids = {kBosId, 5, kEosId};
  text.identity = 30;
  std::vector<MixedSample> batch{make_visual(ModalityId::R, cfg, 0.1, 10),
                                 make_visual(ModalityId::R, cfg, 0.2, 11), text};
  std::vector<TokenBatch> groups = assembler.assemble(batch);
  REQUIRE(groups.size() == 2);
  REQUIRE(groups[0].control.modality == ModalityId::R);
  REQUIRE(groups[0].embeddings.size() == 2);
  REQUIRE(groups[0].identities == std::vector<int>{10, 11});
  REQUIRE(groups[1].control.modality == ModalityId::T);
  REQUIRE(groups[1].embeddings.size() == 1);

  // all five modalities: five groups, canonical order R < I < C < S < T
  std::vector<MixedSample> all{text, make_visual(ModalityId::S, cfg, 0.1, 3),
                               make_visual(ModalityId::C, cfg, 0.1, 2), make_visual(ModalityId::I, cfg, 0.1, 1),
                               make_visual(ModalityId::R, cfg, 0.1, 0)};
  std::vector<TokenBatch> groups5 = assembler.assemble(all);
  REQUIRE(groups5.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) REQUIRE(groups5[i].control.modality == kAllModalities[i]);

  REQUIRE_THROWS_AS(assembler.assemble({}), data_error);
}

TEST_CASE("group-then-flatten is a deterministic permutation of the input") {
  AssemblerConfig cfg = desk_assembler();
  Assembler assembler(cfg, 2);
  // identities double as input positions
  std::vector<MixedSample> batch;
  int pos = 0;
  for (ModalityId m : {ModalityId::T, ModalityId::R, ModalityId::S, ModalityId::R, ModalityId::I,
                       ModalityId::T, ModalityId::C}) {
    if (m == ModalityId::T) {
      TextSample t;
      t.token_ids = {kBosId, 4, kEosId};
      t.identity = pos++;
      batch.push_back(t);
    } else {
      batch.push_back(make_visual(m, cfg, 0.3, pos++));
    }
  }
  auto flatten = [&]() {
    std::vector<int> order;
    for (const TokenBatch& g : assembler.assemble(batch))
      for (int id : g.identities) order.push_back(id);
    return order;
  };
  std::vector<int> run1 = flatten();
  std::vector<int> run2 = flatten();
  REQUIRE(run1 == run2);
  std::vector<int> sorted = run1;
  std::sort(sorted.begin(), sorted.end());
  std::vector<int> expect(batch.size());
  for (std::size_t i = 0; i < expect.size(); ++i) expect[i] = static_cast<int>(i);
  REQUIRE(sorted == expect);
  // within-group input order is preserved
  REQUIRE(run1 == std::vector<int>{1, 3, 4, 6, 2, 0, 5});
}

TEST_CASE("wrong image dims and channels are rejected") {
  AssemblerConfig cfg = desk_assembler();
  VisualTokenizer tok(ModalityId::I, cfg, 1);
  VisualSample wrong_dims;
  wrong_dims.modality = ModalityId::I;
  wrong_dims.pixels = Image(16, 16, 1, 0.1);
  REQUIRE_THROWS_AS(tok.tokenize(wrong_dims), data_error);

  VisualSample wrong_channels;
  wrong_channels.modality = ModalityId::I;
  wrong_channels.pixels = Image(cfg.image_h, cfg.image_w, 3, 0.1);
  REQUIRE_THROWS_AS(tok.tokenize(wrong_channels), data_error);

  VisualSample misrouted = make_visual(ModalityId::C, cfg, 0.1);
  REQUIRE_THROWS_AS(tok.tokenize(misrouted), data_error);
}
