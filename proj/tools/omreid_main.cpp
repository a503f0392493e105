// Command-line surface: dataset generation, training, evaluation, ranked-list
// dumps, parameter accounting and text statistics.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "omreid/config.hpp"
#include "omreid/dataset_io.hpp"
#include "omreid/eval.hpp"
#include "omreid/model.hpp"
#include "omreid/train.hpp"

namespace fs = std::filesystem;
using namespace omreid;

namespace {

struct ConfigCli {
  std::string preset = "desk";
  std::string config_file;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigCli& cli, const std::string& default_preset = "desk") {
  cli.preset = default_preset;
  cmd->add_option("--preset", cli.preset, "configuration preset: desk or full")
      ->default_val(default_preset);
  cmd->add_option("--config", cli.config_file, "key = value configuration file");
  cmd->add_option("--set", cli.overrides, "inline override key=value (repeatable)");
}

RunConfig resolve_config(const ConfigCli& cli) {
  RunConfig rc = preset_config(cli.preset);
  if (!cli.config_file.empty()) rc = load_config_file(cli.config_file, rc);
  for (const std::string& kv : cli.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw config_error("--set expects key=value, got '" + kv + "'");
    apply_kv(rc, kv.substr(0, eq), kv.substr(eq + 1));
  }
  apply_env_overrides(rc);
  return rc;
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot open for write: " + path.string());
  out << content;
  if (!out) throw data_error("short write: " + path.string());
}

std::size_t classifier_classes(const Checkpoint& ckpt) {
  auto it = ckpt.tensors.find("classifier.W");
  if (it == ckpt.tensors.end() || it->second.dims.size() != 2)
    throw data_error("checkpoint lacks a classifier table; cannot infer identity count");
  return it->second.dims[1];
}

Reid5oModel model_from_checkpoint(const RunConfig& rc, const Checkpoint& ckpt) {
  const std::string digest = model_digest(rc);
  if (ckpt.config_digest != digest)
    throw config_error("checkpoint was trained under config digest " + ckpt.config_digest.substr(0, 12) +
                       ", current config digest is " + digest.substr(0, 12));
  Reid5oModel model(rc, classifier_classes(ckpt), rc.seed);
  model.load_weights(ckpt);
  return model;
}

int cmd_synth(const ConfigCli& cli) {
  RunConfig rc = resolve_config(cli);
  const fs::path dir = fs::path(rc.out) / "dataset";
  SynthDataset ds = generate(synth_config(rc));
  write_dataset(ds, dir, rc.train_fraction);
  std::cout << "wrote " << ds.samples.size() << " samples for " << rc.dataset_identities
            << " identities under " << dir.string() << "\n";
  std::cout << "manifests: manifest.jsonl train.jsonl test.jsonl  (config " << config_digest(rc).substr(0, 12)
            << ")\n";
  return 0;
}

int cmd_train(const ConfigCli& cli) {
  RunConfig rc = resolve_config(cli);
  fs::create_directories(rc.out);
  const std::string digest = model_digest(rc);

  SynthDataset ds = generate(synth_config(rc));
  auto [train_manifest, test_manifest] = split(ds.manifest, rc.train_fraction, rc.seed);
  SynthDataset train_ds = subset(ds, train_manifest);
  SynthDataset test_ds = subset(ds, test_manifest);

  std::ofstream log_file(fs::path(rc.out) / "train.log");
  struct Tee : std::ostream, std::streambuf {
    std::ostream &a, &b;
    Tee(std::ostream& a_, std::ostream& b_) : std::ostream(this), a(a_), b(b_) {}
    int overflow(int c) override {
      a.put(static_cast<char>(c));
      b.put(static_cast<char>(c));
      return c;
    }
  } tee(std::cout, log_file);

  TrainedModel trained = train_model(rc, train_ds, &tee, rc.out, digest);

  Checkpoint final_ckpt = trained.model->to_checkpoint(digest);
  final_ckpt.has_optimizer = true;
  final_ckpt.optimizer_step = trained.optimizer->step_count();
  for (const auto& slot : trained.optimizer->slots()) {
    OptimizerSlotState s;
    s.m.assign(slot.m.begin(), slot.m.end());
    s.v.assign(slot.v.begin(), slot.v.end());
    final_ckpt.optimizer.emplace(slot.name, std::move(s));
  }
  const fs::path ckpt_path = fs::path(rc.out) / "checkpoint_final.rid5";
  save_checkpoint(final_ckpt, ckpt_path.string());

  EvalOptions opts{rc.seed, rc.fusion, rc.singleton};
  MetricsReport report = evaluate_model(*trained.model, test_ds, opts, config_digest(rc));
  const nlohmann::json j = report_json(report, rc.fusion, rc.singleton);
  write_text_file(fs::path(rc.out) / "metrics.json", j.dump(2) + "\n");
  const std::string table = report_table(report);
  write_text_file(fs::path(rc.out) / "metrics.txt", table);
  std::cout << table;
  std::cout << "checkpoint: " << ckpt_path.string() << "\n";
  return 0;
}

int cmd_eval(const ConfigCli& cli, const std::string& checkpoint_path, const std::string& manifest_path,
             std::uint64_t seed_flag, bool seed_given) {
  RunConfig rc = resolve_config(cli);
  fs::create_directories(rc.out);
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Reid5oModel model = model_from_checkpoint(rc, ckpt);
  SynthDataset test_ds = load_dataset(manifest_path);

  EvalOptions opts{seed_given ? seed_flag : rc.seed, rc.fusion, rc.singleton};
  MetricsReport report = evaluate_model(model, test_ds, opts, config_digest(rc));
  const nlohmann::json j = report_json(report, rc.fusion, rc.singleton);
  write_text_file(fs::path(rc.out) / "metrics.json", j.dump(2) + "\n");
  const std::string table = report_table(report);
  write_text_file(fs::path(rc.out) / "metrics.txt", table);
  std::cout << table;
  return 0;
}

int cmd_rank(const ConfigCli& cli, const std::string& checkpoint_path, const std::string& manifest_path,
             const std::string& query_set_label, std::size_t top_k, std::uint64_t seed_flag, bool seed_given) {
  RunConfig rc = resolve_config(cli);
  fs::create_directories(rc.out);
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  Reid5oModel model = model_from_checkpoint(rc, ckpt);
  SynthDataset test_ds = load_dataset(manifest_path);
  const std::uint64_t seed = seed_given ? seed_flag : rc.seed;

  const std::vector<QuerySet> sets = build_query_sets(protocol_view(test_ds), seed);
  const QuerySet* chosen = nullptr;
  std::vector<std::string> labels;
  for (const QuerySet& qs : sets) {
    labels.push_back(qs.label());
    if (qs.label() == query_set_label) chosen = &qs;
  }
  if (!chosen) {
    std::string all;
    for (const std::string& l : labels) all += l + " ";
    throw data_error("unknown query set '" + query_set_label + "'; available: " + all);
  }

  // gallery embeddings
  std::vector<std::size_t> gallery_indices;
  std::vector<int> gallery_ids;
  std::vector<Tensor> gallery_rows;
  for (std::size_t i = 0; i < test_ds.manifest.records.size(); ++i) {
    if (test_ds.manifest.records[i].modality != ModalityId::R) continue;
    gallery_indices.push_back(i);
    gallery_ids.push_back(test_ds.manifest.records[i].id);
    gallery_rows.push_back(model.encode_sample(test_ds.samples[i]).pooled);
  }
  const Tensor gallery = stack_rows(gallery_rows);

  std::vector<Tensor> queries;
  std::vector<int> query_ids;
  const ModalityCombo combo = chosen->combo();
  for (const QueryTuple& t : chosen->tuples) {
    std::map<ModalityId, Tensor> sequences;
    for (const auto& [mod, sample_idx] : t.samples)
      sequences.emplace(mod, model.encode_sample(test_ds.samples[sample_idx]).sequence);
    queries.push_back(model.fm().fuse(sequences, combo).vector);
    query_ids.push_back(t.identity);
  }
  const std::vector<RankingList> rankings = rank(queries, gallery);

  nlohmann::json j;
  j["query_set"] = chosen->label();
  j["seed"] = seed;
  j["config_digest"] = config_digest(rc);
  j["k"] = top_k;
  j["queries"] = nlohmann::json::array();
  for (std::size_t qi = 0; qi < rankings.size(); ++qi) {
    nlohmann::json entry;
    entry["query_index"] = qi;
    entry["identity"] = query_ids[qi];
    entry["top"] = nlohmann::json::array();
    for (std::size_t pos = 0; pos < std::min(top_k, rankings[qi].order.size()); ++pos) {
      const std::size_t g = rankings[qi].order[pos];
      entry["top"].push_back({{"gallery_index", g},
                              {"identity", gallery_ids[g]},
                              {"path", test_ds.manifest.records[gallery_indices[g]].path},
                              {"affinity", rankings[qi].affinities[pos]}});
    }
    j["queries"].push_back(std::move(entry));
  }
  const std::string out_name = "rank_" + query_set_label + ".json";
  write_text_file(fs::path(rc.out) / out_name, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_params(const ConfigCli& cli, bool as_json) {
  RunConfig rc = resolve_config(cli);
  EncoderConfig cfg = visual_encoder_config(rc);
  const std::size_t n_experts = cfg.expert_modalities.size();
  const std::size_t tokens = (rc.image_h / rc.patch) * (rc.image_w / rc.patch) + 1;

  nlohmann::json j;
  j["encoder"] = {{"layers", cfg.layers}, {"width", cfg.width}, {"fused_qkv", cfg.fused_qkv},
                  {"mlp_ratio", cfg.mlp_ratio}};
  j["experts"] = n_experts;
  j["tokens_per_image"] = tokens;
  j["rows"] = nlohmann::json::array();

  std::ostringstream table;
  table << "multi-expert router accounting (" << n_experts << " experts, " << cfg.layers << " layers, width "
        << cfg.width << ", " << tokens << " tokens/image)\n";
  table << "rank | params (M) | flops (G)\n";
  for (std::size_t r : {4ul, 8ul, 16ul, 32ul}) {
    EncoderConfig row_cfg = cfg;
    row_cfg.rank = r;
    const std::size_t params = count_expert_params(row_cfg, n_experts);
    const std::size_t flops = count_expert_flops(row_cfg, tokens);  // one expert active per input
    const double params_m = std::round(static_cast<double>(params) / 1e6 * 100.0) / 100.0;
    const double flops_g = std::round(static_cast<double>(flops) / 1e9 * 100.0) / 100.0;
    std::ostringstream line;
    line << "r=" << r << " | " << std::fixed << std::setprecision(2) << params_m << " M | " << flops_g
         << " G";
    table << line.str() << "\n";
    j["rows"].push_back({{"rank", r}, {"params", params}, {"params_millions", params_m},
                         {"flops", flops}, {"flops_giga", flops_g}});
  }
  if (as_json)
    std::cout << j.dump(2) << "\n";
  else
    std::cout << table.str();
  return 0;
}

int cmd_stats(const ConfigCli& cli, const std::string& manifest_path) {
  RunConfig rc = resolve_config(cli);
  fs::create_directories(rc.out);
  SynthDataset ds = load_dataset(manifest_path);
  std::vector<std::vector<std::size_t>> texts;
  for (const MixedSample& s : ds.samples)
    if (std::holds_alternative<TextSample>(s)) texts.push_back(strip_flags(std::get<TextSample>(s).token_ids));
  if (texts.empty()) throw data_error("manifest contains no text samples");
  EntropyReport report = text_entropy(texts);

  double max_h = 0.0;
  for (double h : report.per_text) max_h = std::max(max_h, h);
  const std::size_t bins = 10;
  std::vector<std::size_t> histogram(bins, 0);
  const double width = max_h > 0.0 ? max_h / static_cast<double>(bins) : 1.0;
  for (double h : report.per_text)
    histogram[std::min(bins - 1, static_cast<std::size_t>(h / width))]++;

  nlohmann::json j;
  j["n_texts"] = texts.size();
  j["mean_entropy_bits"] = report.mean;
  j["histogram"] = nlohmann::json::array();
  std::ostringstream table;
  table << "per-text Shannon entropy over " << texts.size() << " texts\n";
  for (std::size_t b = 0; b < bins; ++b) {
    const double lo = width * static_cast<double>(b), hi = width * static_cast<double>(b + 1);
    j["histogram"].push_back({{"lo", lo}, {"hi", hi}, {"count", histogram[b]}});
    table << std::fixed << std::setprecision(3) << "[" << lo << ", " << hi << ")  " << std::string(histogram[b], '#')
          << " " << histogram[b] << "\n";
  }
  table << "corpus mean: " << std::setprecision(4) << report.mean << " bits\n";
  write_text_file(fs::path(rc.out) / "stats.json", j.dump(2) + "\n");
  std::cout << table.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"omni-modal person retrieval: synthesize, train, evaluate"};
  app.require_subcommand(1);

  ConfigCli synth_cli, train_cli, eval_cli, rank_cli, params_cli, stats_cli;

  CLI::App* synth = app.add_subcommand("synth", "generate the deterministic five-modal dataset");
  add_config_options(synth, synth_cli);

  CLI::App* train = app.add_subcommand("train", "train and report metrics on the test split");
  add_config_options(train, train_cli);

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint against a test manifest");
  add_config_options(eval, eval_cli);
  std::string eval_ckpt, eval_manifest;
  std::uint64_t eval_seed = 0;
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--manifest", eval_manifest, "test manifest (jsonl)")->required();
  CLI::Option* eval_seed_opt = eval->add_option("--seed", eval_seed, "protocol seed (defaults to run.seed)");
  std::string eval_fusion, eval_singleton;
  eval->add_option("--fusion", eval_fusion, "fm | superposition");
  eval->add_option("--singleton", eval_singleton, "fm | cls");

  CLI::App* rankc = app.add_subcommand("rank", "dump top-k gallery entries per query as JSON");
  add_config_options(rankc, rank_cli);
  std::string rank_ckpt, rank_manifest, rank_label = "MM-1:T";
  std::size_t rank_k = 10;
  std::uint64_t rank_seed = 0;
  rankc->add_option("--checkpoint", rank_ckpt, "checkpoint file")->required();
  rankc->add_option("--manifest", rank_manifest, "test manifest (jsonl)")->required();
  rankc->add_option("--query-set", rank_label, "query set label, e.g. MM-2:T+I");
  rankc->add_option("--k", rank_k, "list length");
  CLI::Option* rank_seed_opt = rankc->add_option("--seed", rank_seed, "protocol seed");

  CLI::App* params = app.add_subcommand("params", "expert parameter/FLOP accounting table");
  add_config_options(params, params_cli, "full");
  bool params_json = false;
  params->add_flag("--json", params_json, "emit JSON instead of the table");

  CLI::App* stats = app.add_subcommand("stats", "per-text Shannon entropy histogram and corpus mean");
  add_config_options(stats, stats_cli);
  std::string stats_manifest;
  stats->add_option("--manifest", stats_manifest, "manifest (jsonl)")->required();

  try {
    app.parse(argc, argv);
    if (*synth) return cmd_synth(synth_cli);
    if (*train) return cmd_train(train_cli);
    if (*eval) {
      if (!eval_fusion.empty()) eval_cli.overrides.push_back("run.fusion=" + eval_fusion);
      if (!eval_singleton.empty()) eval_cli.overrides.push_back("run.singleton=" + eval_singleton);
      return cmd_eval(eval_cli, eval_ckpt, eval_manifest, eval_seed, eval_seed_opt->count() > 0);
    }
    if (*rankc) return cmd_rank(rank_cli, rank_ckpt, rank_manifest, rank_label, rank_k, rank_seed,
                                rank_seed_opt->count() > 0);
    if (*params) return cmd_params(params_cli, params_json);
    if (*stats) return cmd_stats(stats_cli, stats_manifest);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const data_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const numeric_error& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
