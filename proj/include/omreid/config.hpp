#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "omreid/encoder.hpp"
#include "omreid/fusion.hpp"
#include "omreid/hash.hpp"
#include "omreid/objective.hpp"
#include "omreid/synthgen.hpp"

namespace omreid {

enum class FusionMode { Fm, Superposition };
enum class SingletonMode { Fm, Cls };

inline std::string to_string(FusionMode m) { return m == FusionMode::Fm ? "fm" : "superposition"; }
inline std::string to_string(SingletonMode m) { return m == SingletonMode::Fm ? "fm" : "cls"; }

// Full run configuration. Defaults are the full-scale settings; the "desk"
// preset shrinks everything so training completes in minutes.
struct RunConfig {
  // dataset
  std::size_t dataset_identities = 1000;
  std::size_t dataset_views = 4;
  std::size_t image_h = 384;
  std::size_t image_w = 128;
  std::size_t vocab = 49408;
  double train_fraction = 0.6;
  // assembler
  std::size_t patch = 16;
  std::size_t max_text_len = 77;
  bool replicate_gray = false;
  // unified (visual) encoder
  std::size_t enc_layers = 12;
  std::size_t enc_width = 768;
  std::size_t enc_heads = 12;
  std::size_t enc_mlp_ratio = 4;
  std::size_t enc_rank = 4;
  std::size_t enc_projection = 512;
  bool enc_fused_qkv = true;
  // independent text encoder
  std::size_t text_layers = 12;
  std::size_t text_width = 512;
  std::size_t text_heads = 8;
  std::size_t text_mlp_ratio = 4;
  // feature mixture
  std::size_t fm_hidden = 512;
  std::size_t fm_heads = 8;
  // objective
  double alpha = 1.0;
  double tau = 0.02;
  std::size_t epochs = 60;
  double warmup_epochs = 5.0;
  double lr_base = 1e-5;
  double lr_expert_fm = 5e-5;
  double lr_start = 1e-6;
  std::size_t batch_identities = 32;
  std::size_t passes_per_epoch = 1;
  // run
  std::uint64_t seed = 1;
  std::string out = "out";
  FusionMode fusion = FusionMode::Fm;
  SingletonMode singleton = SingletonMode::Fm;
  std::size_t checkpoint_every = 10;
};

inline RunConfig desk_preset() {
  RunConfig rc;
  rc.dataset_identities = 30;
  rc.dataset_views = 4;
  rc.image_h = 32;
  rc.image_w = 16;
  rc.vocab = 64;
  rc.train_fraction = 2.0 / 3.0;
  rc.patch = 8;
  rc.max_text_len = 24;
  rc.enc_layers = 2;
  rc.enc_width = 64;
  rc.enc_heads = 4;
  rc.enc_rank = 2;
  rc.enc_projection = 32;
  rc.text_layers = 2;
  rc.text_width = 64;
  rc.text_heads = 4;
  rc.fm_hidden = 32;
  rc.fm_heads = 4;
  rc.epochs = 30;
  rc.warmup_epochs = 3.0;
  rc.lr_base = 3e-4;
  rc.lr_expert_fm = 1e-3;
  rc.lr_start = 3e-5;
  rc.batch_identities = 16;
  rc.passes_per_epoch = 2;
  rc.checkpoint_every = 10;
  return rc;
}

inline RunConfig preset_config(const std::string& name) {
  if (name == "full") return RunConfig{};
  if (name == "desk") return desk_preset();
  throw config_error("unknown preset '" + name + "' (expected full or desk)");
}

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& value);

template <>
inline std::size_t parse_number<std::size_t>(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing junk");
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw config_error("key '" + key + "': expected a nonnegative integer, got '" + value + "'");
  }
}

template <>
inline double parse_number<double>(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing junk");
    return v;
  } catch (const std::exception&) {
    throw config_error("key '" + key + "': expected a number, got '" + value + "'");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw config_error("key '" + key + "': expected true/false, got '" + value + "'");
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

// Applies one key = value pair; unknown keys are rejected.
inline void apply_kv(RunConfig& rc, const std::string& key, const std::string& value) {
  using detail::parse_bool;
  using detail::parse_number;
  if (key == "dataset.identities") rc.dataset_identities = parse_number<std::size_t>(key, value);
  else if (key == "dataset.views") rc.dataset_views = parse_number<std::size_t>(key, value);
  else if (key == "dataset.image_h") rc.image_h = parse_number<std::size_t>(key, value);
  else if (key == "dataset.image_w") rc.image_w = parse_number<std::size_t>(key, value);
  else if (key == "dataset.vocab") rc.vocab = parse_number<std::size_t>(key, value);
  else if (key == "dataset.train_fraction") rc.train_fraction = parse_number<double>(key, value);
  else if (key == "assembler.patch") rc.patch = parse_number<std::size_t>(key, value);
  else if (key == "assembler.max_text_len") rc.max_text_len = parse_number<std::size_t>(key, value);
  else if (key == "assembler.replicate_gray") rc.replicate_gray = parse_bool(key, value);
  else if (key == "encoder.layers") rc.enc_layers = parse_number<std::size_t>(key, value);
  else if (key == "encoder.width") rc.enc_width = parse_number<std::size_t>(key, value);
  else if (key == "encoder.heads") rc.enc_heads = parse_number<std::size_t>(key, value);
  else if (key == "encoder.mlp_ratio") rc.enc_mlp_ratio = parse_number<std::size_t>(key, value);
  else if (key == "encoder.rank") rc.enc_rank = parse_number<std::size_t>(key, value);
  else if (key == "encoder.projection") rc.enc_projection = parse_number<std::size_t>(key, value);
  else if (key == "encoder.fused_qkv") rc.enc_fused_qkv = parse_bool(key, value);
  else if (key == "text.layers") rc.text_layers = parse_number<std::size_t>(key, value);
  else if (key == "text.width") rc.text_width = parse_number<std::size_t>(key, value);
  else if (key == "text.heads") rc.text_heads = parse_number<std::size_t>(key, value);
  else if (key == "text.mlp_ratio") rc.text_mlp_ratio = parse_number<std::size_t>(key, value);
  else if (key == "fm.hidden") rc.fm_hidden = parse_number<std::size_t>(key, value);
  else if (key == "fm.heads") rc.fm_heads = parse_number<std::size_t>(key, value);
  else if (key == "objective.alpha") rc.alpha = parse_number<double>(key, value);
  else if (key == "objective.tau") rc.tau = parse_number<double>(key, value);
  else if (key == "objective.epochs") rc.epochs = parse_number<std::size_t>(key, value);
  else if (key == "objective.warmup") rc.warmup_epochs = parse_number<double>(key, value);
  else if (key == "objective.lr_base") rc.lr_base = parse_number<double>(key, value);
  else if (key == "objective.lr_expert_fm") rc.lr_expert_fm = parse_number<double>(key, value);
  else if (key == "objective.lr_start") rc.lr_start = parse_number<double>(key, value);
  else if (key == "objective.batch") rc.batch_identities = parse_number<std::size_t>(key, value);
  else if (key == "objective.passes") rc.passes_per_epoch = parse_number<std::size_t>(key, value);
  else if (key == "run.seed") rc.seed = parse_number<std::size_t>(key, value);
  else if (key == "run.out") rc.out = value;
  else if (key == "run.checkpoint_every") rc.checkpoint_every = parse_number<std::size_t>(key, value);
  else if (key == "run.fusion") {
    if (value == "fm") rc.fusion = FusionMode::Fm;
    else if (value == "superposition") rc.fusion = FusionMode::Superposition;
    else throw config_error("run.fusion must be fm or superposition, got '" + value + "'");
  } else if (key == "run.singleton") {
    if (value == "fm") rc.singleton = SingletonMode::Fm;
    else if (value == "cls") rc.singleton = SingletonMode::Cls;
    else throw config_error("run.singleton must be fm or cls, got '" + value + "'");
  } else {
    throw config_error("unknown config key '" + key + "'");
  }
}

// Flat `key = value` lines with `#` comments.
inline RunConfig parse_config_text(const std::string& text, RunConfig base) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw config_error("line " + std::to_string(line_no) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw config_error("line " + std::to_string(line_no) + ": empty key");
    apply_kv(base, key, value);
  }
  return base;
}

inline RunConfig load_config_file(const std::string& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw config_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), base);
}

// OMREID_SEED and OMREID_OUT override the config.
inline void apply_env_overrides(RunConfig& rc) {
  if (const char* seed = std::getenv("OMREID_SEED")) apply_kv(rc, "run.seed", seed);
  if (const char* out = std::getenv("OMREID_OUT")) apply_kv(rc, "run.out", out);
}

// Sorted key = value rendering of the full configuration.
inline std::string canonical_config(const RunConfig& rc, bool include_out = true,
                                    bool include_eval_switches = true) {
  std::map<std::string, std::string> kv;
  kv["dataset.identities"] = std::to_string(rc.dataset_identities);
  kv["dataset.views"] = std::to_string(rc.dataset_views);
  kv["dataset.image_h"] = std::to_string(rc.image_h);
  kv["dataset.image_w"] = std::to_string(rc.image_w);
  kv["dataset.vocab"] = std::to_string(rc.vocab);
  kv["dataset.train_fraction"] = detail::format_double(rc.train_fraction);
  kv["assembler.patch"] = std::to_string(rc.patch);
  kv["assembler.max_text_len"] = std::to_string(rc.max_text_len);
  kv["assembler.replicate_gray"] = rc.replicate_gray ? "true" : "false";
  kv["encoder.layers"] = std::to_string(rc.enc_layers);
  kv["encoder.width"] = std::to_string(rc.enc_width);
  kv["encoder.heads"] = std::to_string(rc.enc_heads);
  kv["encoder.mlp_ratio"] = std::to_string(rc.enc_mlp_ratio);
  kv["encoder.rank"] = std::to_string(rc.enc_rank);
  kv["encoder.projection"] = std::to_string(rc.enc_projection);
  kv["encoder.fused_qkv"] = rc.enc_fused_qkv ? "true" : "false";
  kv["text.layers"] = std::to_string(rc.text_layers);
  kv["text.width"] = std::to_string(rc.text_width);
  kv["text.heads"] = std::to_string(rc.text_heads);
  kv["text.mlp_ratio"] = std::to_string(rc.text_mlp_ratio);
  kv["fm.hidden"] = std::to_string(rc.fm_hidden);
  kv["fm.heads"] = std::to_string(rc.fm_heads);
  kv["objective.alpha"] = detail::format_double(rc.alpha);
  kv["objective.tau"] = detail::format_double(rc.tau);
  kv["objective.epochs"] = std::to_string(rc.epochs);
  kv["objective.warmup"] = detail::format_double(rc.warmup_epochs);
  kv["objective.lr_base"] = detail::format_double(rc.lr_base);
  kv["objective.lr_expert_fm"] = detail::format_double(rc.lr_expert_fm);
  kv["objective.lr_start"] = detail::format_double(rc.lr_start);
  kv["objective.batch"] = std::to_string(rc.batch_identities);
  kv["objective.passes"] = std::to_string(rc.passes_per_epoch);
  kv["run.seed"] = std::to_string(rc.seed);
  if (include_out) kv["run.out"] = rc.out;
  if (include_eval_switches) {
    kv["run.checkpoint_every"] = std::to_string(rc.checkpoint_every);
    kv["run.fusion"] = to_string(rc.fusion);
    kv["run.singleton"] = to_string(rc.singleton);
  }
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  return os.str();
}

// Digest of the canonicalized config, embedded in every output. The output
// directory is excluded so relocating a run does not change its identity.
inline std::string config_digest(const RunConfig& rc) {
  return sha256_hex(canonical_config(rc, /*include_out=*/false));
}

// Digest over the keys that determine the trained weights; evaluation-time
// switches (fusion/singleton mode, checkpoint cadence) are excluded so one
// checkpoint serves every evaluation mode.
inline std::string model_digest(const RunConfig& rc) {
  return sha256_hex(canonical_config(rc, /*include_out=*/false, /*include_eval_switches=*/false));
}

// ---------------------------------------------------------------------------
// derived component configs
// ---------------------------------------------------------------------------

inline SynthConfig synth_config(const RunConfig& rc) {
  SynthConfig cfg;
  cfg.n_identities = rc.dataset_identities;
  cfg.views_per_modality = rc.dataset_views;
  cfg.image_h = rc.image_h;
  cfg.image_w = rc.image_w;
  cfg.vocab_size = rc.vocab;
  cfg.seed = rc.seed;
  return cfg;
}

inline AssemblerConfig assembler_config(const RunConfig& rc) {
  AssemblerConfig cfg;
  cfg.image_h = rc.image_h;
  cfg.image_w = rc.image_w;
  cfg.patch = rc.patch;
  cfg.visual_width = rc.enc_width;
  cfg.vocab_size = rc.vocab;
  cfg.max_text_len = rc.max_text_len;
  cfg.text_width = rc.text_width;
  cfg.replicate_gray_to_rgb = rc.replicate_gray;
  return cfg;
}

inline EncoderConfig visual_encoder_config(const RunConfig& rc) {
  EncoderConfig cfg;
  cfg.layers = rc.enc_layers;
  cfg.width = rc.enc_width;
  cfg.heads = rc.enc_heads;
  cfg.mlp_ratio = rc.enc_mlp_ratio;
  cfg.rank = rc.enc_rank;
  cfg.projection_dim = rc.enc_projection;
  cfg.fused_qkv = rc.enc_fused_qkv;
  cfg.expert_modalities = {ModalityId::R, ModalityId::I, ModalityId::C, ModalityId::S};
  return cfg;
}

inline EncoderConfig text_encoder_config(const RunConfig& rc) {
  EncoderConfig cfg;
  cfg.layers = rc.text_layers;
  cfg.width = rc.text_width;
  cfg.heads = rc.text_heads;
  cfg.mlp_ratio = rc.text_mlp_ratio;
  cfg.rank = 0;  // the independent text encoder carries no experts
  cfg.projection_dim = rc.enc_projection;
  cfg.fused_qkv = rc.enc_fused_qkv;
  return cfg;
}

inline MixtureConfig mixture_config(const RunConfig& rc) {
  MixtureConfig cfg;
  cfg.hidden = rc.fm_hidden;
  cfg.heads = rc.fm_heads;
  cfg.embed_dim = rc.enc_projection;
  return cfg;
}

inline ScheduleConfig schedule_config(const RunConfig& rc) {
  ScheduleConfig cfg;
  cfg.lr_base = rc.lr_base;
  cfg.lr_expert_fm = rc.lr_expert_fm;
  cfg.lr_start = rc.lr_start;
  cfg.warmup_epochs = rc.warmup_epochs;
  return cfg;
}

}  // namespace omreid
