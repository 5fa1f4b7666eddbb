// Command-line front end: toy training, reference building, scoring, and the
// evaluation / ablation / sweep harnesses.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "gradcoo/checkpoint.hpp"
#include "gradcoo/eval.hpp"
#include "json.hpp"

namespace {

using namespace gradcoo;

struct ScorePrompt {
  std::string prompt;
  std::string id;
};

// Lenient prompt list for the score subcommand: JSONL records that carry at
// least a "prompt"; labels, if present, are ignored.
std::vector<ScorePrompt> load_score_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open prompts file " + path);
  std::vector<ScorePrompt> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("prompt") ||
        !j["prompt"].is_string()) {
      throw ParseError("prompts line " + std::to_string(lineno) +
                       ": expected {\"prompt\": string}");
    }
    ScorePrompt sp;
    sp.prompt = j["prompt"].get<std::string>();
    sp.id = j.value("id", "p" + std::to_string(out.size()));
    out.push_back(std::move(sp));
  }
  return out;
}

void emit(const std::string& path, const std::string& content) {
  if (path.empty()) {
    std::fputs(content.c_str(), stdout);
  } else {
    write_text_file(path, content);
  }
}

nlohmann::json report_row(const MetricsReport& r) {
  return {{"auprc", r.auprc}, {"precision", r.precision},
          {"recall", r.recall}, {"f1", r.f1},
          {"threshold", r.threshold}};
}

int cmd_train_toy(const std::string& corpus_path, const std::string& out_path,
                  const ModelConfig& cfg, std::size_t steps, double lr,
                  std::size_t batch) {
  const Corpus corpus = load_corpus_jsonl(corpus_path);
  const TrainResult result = train_toy(cfg, corpus, steps, lr, batch);
  save_checkpoint(out_path, result.weights, cfg);
  std::printf("trained %zu steps on %zu examples\n", steps, corpus.size());
  std::printf("loss: initial %.6f -> final %.6f\n", result.initial_loss, result.final_loss);
  std::printf("checkpoint: %s (digest %s)\n", out_path.c_str(),
              weights_digest(result.weights, cfg).c_str());
  return 0;
}

int cmd_build_refs(const std::string& model_path, const std::string& refs_file,
                   const std::string& out_path, const std::string& compliance,
                   const std::string& granularity, bool no_norm, bool no_abs) {
  auto [weights, cfg] = load_checkpoint(model_path);
  const ReferencePrompts prompts = load_reference_prompts(refs_file);
  const ComponentRegistry registry =
      ComponentRegistry::build(cfg, granularity_from_string(granularity));
  ProcessingOptions options;
  options.apply_norm = !no_norm;
  options.apply_abs = !no_abs;
  const ReferenceSet refs = build_references(weights, cfg, prompts.safe, prompts.unsafe,
                                             compliance, registry, options);
  save_references(out_path, refs);
  std::printf("references: %zu safe + %zu unsafe prompts, %zu components\n",
              prompts.safe.size(), prompts.unsafe.size(), refs.safe.size());
  std::printf("options: norm=%s abs=%s compliance=\"%s\"\n",
              options.apply_norm ? "on" : "off", options.apply_abs ? "on" : "off",
              compliance.c_str());
  std::printf("written: %s (digest %s)\n", out_path.c_str(),
              references_digest(refs).c_str());
  return 0;
}

int cmd_score(const std::string& model_path, const std::string& refs_path,
              const std::string& prompt, const std::string& prompts_file,
              double threshold, const std::string& method, const std::string& out_path) {
  auto [weights, cfg] = load_checkpoint(model_path);
  const ReferenceSet refs = load_references(refs_path);
  ClassifierConfig config;
  config.threshold = threshold;
  config.granularity = refs.provenance.granularity;
  config.options = refs.options;
  config.compliance = refs.provenance.compliance;
  const ScoreMethod m = score_method_from_string(method);

  auto score_one = [&](const std::string& text) {
    return m == ScoreMethod::CosineBaseline
               ? cosine_baseline_score(weights, cfg, text, refs, config)
               : score_prompt(weights, cfg, text, refs, config);
  };

  if (!prompt.empty()) {
    const ScoreBreakdown sb = score_one(prompt);
    std::printf("aggregate score: %.6f  (threshold %g)\n", sb.aggregate, threshold);
    std::printf("decision: %s\n", to_string(sb.decision));
    std::vector<std::pair<std::string, ComponentScore>> ranked(sb.per_component.begin(),
                                                               sb.per_component.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.second.relative > b.second.relative;
    });
    std::printf("top components:\n");
    for (std::size_t i = 0; i < std::min<std::size_t>(5, ranked.size()); ++i) {
      std::printf("  %-28s s=%.4f  (unsafe %.4g, safe %.4g)%s\n", ranked[i].first.c_str(),
                  ranked[i].second.relative, ranked[i].second.co_unsafe,
                  ranked[i].second.co_safe, ranked[i].second.degenerate ? "  [tie]" : "");
    }
    return 0;
  }

  const std::vector<ScorePrompt> prompts = load_score_prompts(prompts_file);
  std::string csv = "id,score,decision\n";
  char buf[64];
  for (const ScorePrompt& sp : prompts) {
    const ScoreBreakdown sb = score_one(sp.prompt);
    std::snprintf(buf, sizeof(buf), "%.17g", sb.aggregate);
    csv += sp.id + "," + buf + "," + to_string(sb.decision) + "\n";
  }
  emit(out_path, csv);
  return 0;
}

int cmd_eval(const RunConfig& rc, const std::string& report_path,
             const std::string& scores_path) {
  const EvalOutcome outcome = run_eval_from_config(rc);
  const MetricsReport& r = outcome.run.report;
  std::printf("prompts: %zu   AUPRC: %.4f   P: %.4f   R: %.4f   F1: %.4f   t: %g\n",
              outcome.run.scores.size(), r.auprc, r.precision, r.recall, r.f1,
              r.threshold);
  if (!report_path.empty()) write_text_file(report_path, eval_report_json(outcome));
  if (!scores_path.empty()) write_text_file(scores_path, scores_csv(outcome.run));
  return 0;
}

int cmd_ablate(const std::string& model_path, const std::string& refs_file,
               const std::string& dataset_path, const ClassifierConfig& config,
               const EvalOptions& options, const std::string& report_path) {
  auto [weights, cfg] = load_checkpoint(model_path);
  const ReferencePrompts prompts = load_reference_prompts(refs_file);
  const auto dataset = load_jsonl(dataset_path);
  const auto rows = run_ablation(weights, cfg, prompts, dataset, config, options);

  nlohmann::json j;
  j["kind"] = "gradcoo_ablation_report";
  j["provenance"] = {{"model_digest", weights_digest(weights, cfg)},
                     {"dataset_digest", file_digest(dataset_path)},
                     {"refs_file_digest", file_digest(refs_file)}};
  j["config"] = {{"compliance", config.compliance},
                 {"granularity", to_string(config.granularity)},
                 {"threshold", config.threshold},
                 {"workers", options.workers},
                 {"corrupt_signs", options.corrupt_signs},
                 {"corruption_seed", options.corruption_seed}};
  nlohmann::json jrows = nlohmann::json::array();
  for (const AblationRow& row : rows) {
    std::printf("%-16s AUPRC %.4f   P %.4f   R %.4f   F1 %.4f\n", row.variant.c_str(),
                row.report.auprc, row.report.precision, row.report.recall, row.report.f1);
    nlohmann::json rj = report_row(row.report);
    rj["variant"] = row.variant;
    rj["apply_norm"] = row.options.apply_norm;
    rj["apply_abs"] = row.options.apply_abs;
    jrows.push_back(std::move(rj));
  }
  j["rows"] = std::move(jrows);
  if (!report_path.empty()) write_text_file(report_path, j.dump(2) + "\n");
  return 0;
}

int cmd_sweep_refs(const std::string& model_path, const std::string& pool_path,
                   const std::string& dataset_path, std::size_t k_min, std::size_t k_max,
                   std::size_t samples, std::uint64_t seed,
                   const ClassifierConfig& config, const EvalOptions& options,
                   const std::string& report_path) {
  auto [weights, cfg] = load_checkpoint(model_path);
  const ReferencePrompts pool = load_reference_prompts(pool_path);
  const auto dataset = load_jsonl(dataset_path);
  const auto points = sweep_reference_count(weights, cfg, pool, dataset, k_min, k_max,
                                            samples, seed, config, options);

  nlohmann::json j;
  j["kind"] = "gradcoo_reference_sweep";
  j["provenance"] = {{"model_digest", weights_digest(weights, cfg)},
                     {"dataset_digest", file_digest(dataset_path)},
                     {"pool_digest", file_digest(pool_path)}};
  j["config"] = {{"seed", seed},
                 {"samples", samples},
                 {"k_min", k_min},
                 {"k_max", k_max},
                 {"compliance", config.compliance},
                 {"threshold", config.threshold},
                 {"workers", options.workers}};
  nlohmann::json jrows = nlohmann::json::array();
  for (const SweepPoint& p : points) {
    std::printf("k=%zu  mean AUPRC %.4f  std %.4f\n", p.k, p.mean_auprc, p.std_auprc);
    jrows.push_back({{"k", p.k},
                     {"mean_auprc", p.mean_auprc},
                     {"std_auprc", p.std_auprc},
                     {"samples", p.samples}});
  }
  j["rows"] = std::move(jrows);
  if (!report_path.empty()) write_text_file(report_path, j.dump(2) + "\n");
  return 0;
}

int cmd_sweep_responses(const std::string& model_path, const std::string& refs_file,
                        const std::string& dataset_path,
                        std::vector<std::string> responses,
                        const ClassifierConfig& config, const EvalOptions& options,
                        const std::string& report_path) {
  auto [weights, cfg] = load_checkpoint(model_path);
  const ReferencePrompts prompts = load_reference_prompts(refs_file);
  const auto dataset = load_jsonl(dataset_path);
  if (responses.empty()) responses = default_compliance_responses();
  const ResponseSweep sweep = sweep_compliance_responses(weights, cfg, responses, prompts,
                                                         dataset, config, options);

  nlohmann::json j;
  j["kind"] = "gradcoo_response_sweep";
  j["provenance"] = {{"model_digest", weights_digest(weights, cfg)},
                     {"dataset_digest", file_digest(dataset_path)},
                     {"refs_file_digest", file_digest(refs_file)}};
  j["config"] = {{"threshold", config.threshold}, {"workers", options.workers}};
  nlohmann::json jrows = nlohmann::json::array();
  for (const ResponseRow& row : sweep.rows) {
    std::printf("%-46s AUPRC %.4f\n", ("\"" + row.response + "\"").c_str(), row.auprc);
    jrows.push_back({{"response", row.response}, {"auprc", row.auprc}});
  }
  std::printf("mean %.4f   std %.4f\n", sweep.mean_auprc, sweep.std_auprc);
  j["rows"] = std::move(jrows);
  j["mean_auprc"] = sweep.mean_auprc;
  j["std_auprc"] = sweep.std_auprc;
  if (!report_path.empty()) write_text_file(report_path, j.dump(2) + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gradient co-occurrence unsafe-prompt detector"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  app.set_config("--config", "", "key/value config file; flags override it");

  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "global random seed")
      ->envname("GRADCOO_SEED")
      ->capture_default_str();

  // train-toy
  auto* train = app.add_subcommand("train-toy", "train the bundled toy model");
  std::string corpus_path, train_out = "model.ckpt";
  ModelConfig cfg;
  std::size_t steps = 300, batch = 8;
  double lr = 0.4;
  train->add_option("--corpus", corpus_path, "training corpus JSONL")->required();
  train->add_option("--out", train_out, "output checkpoint path")->capture_default_str();
  train->add_option("--steps", steps)->capture_default_str();
  train->add_option("--lr", lr)->capture_default_str();
  train->add_option("--batch", batch)->capture_default_str();
  train->add_option("--d-model", cfg.d_model)->capture_default_str();
  train->add_option("--n-layers", cfg.n_layers)->capture_default_str();
  train->add_option("--n-heads", cfg.n_heads)->capture_default_str();
  train->add_option("--d-ff", cfg.d_ff)->capture_default_str();
  train->add_option("--max-seq-len", cfg.max_seq_len)->capture_default_str();

  // build-refs
  auto* build = app.add_subcommand("build-refs", "build gradient references");
  std::string model_path, refs_file, refs_out = "refs.bin", compliance = "Sure";
  std::string granularity = "matrix";
  bool no_norm = false, no_abs = false;
  build->add_option("--model", model_path, "model checkpoint")->required();
  build->add_option("--refs-file", refs_file, "reference prompts JSONL")->required();
  build->add_option("--out", refs_out)->capture_default_str();
  build->add_option("--compliance", compliance)->capture_default_str();
  build->add_option("--granularity", granularity)
      ->check(CLI::IsMember({"matrix", "layer", "head"}))
      ->capture_default_str();
  build->add_flag("--no-norm", no_norm, "skip deviation normalization");
  build->add_flag("--no-abs", no_abs, "skip the absolute value");

  // score
  auto* score = app.add_subcommand("score", "score a prompt or a prompts file");
  std::string score_model, score_refs, prompt, prompts_file, score_out;
  double threshold = 0.5;
  std::string method = "co_occurrence";
  score->add_option("--model", score_model)->required();
  score->add_option("--refs", score_refs)->required();
  auto* popt = score->add_option("--prompt", prompt, "single prompt text");
  auto* fopt = score->add_option("--prompts-file", prompts_file, "JSONL prompts");
  popt->excludes(fopt);
  score->add_option("--threshold", threshold)->capture_default_str();
  score->add_option("--method", method)
      ->check(CLI::IsMember({"co_occurrence", "cosine_baseline"}))
      ->capture_default_str();
  score->add_option("--out", score_out, "CSV output path (default stdout)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate on a labeled dataset");
  std::string eval_model, eval_refs, dataset_path, report_path, scores_path;
  double eval_threshold = 0.5;
  std::size_t workers = 1;
  std::string eval_method = "co_occurrence", eval_granularity = "matrix";
  bool calibrate = false, corrupt_signs = false;
  std::uint64_t corruption_seed = 0;
  eval_cmd->add_option("--model", eval_model)->required();
  eval_cmd->add_option("--refs", eval_refs)->required();
  eval_cmd->add_option("--dataset", dataset_path)->required();
  eval_cmd->add_option("--threshold", eval_threshold)->capture_default_str();
  eval_cmd->add_option("--granularity", eval_granularity)
      ->check(CLI::IsMember({"matrix", "layer", "head"}))
      ->capture_default_str();
  eval_cmd->add_option("--workers", workers)->capture_default_str();
  eval_cmd->add_option("--method", eval_method)
      ->check(CLI::IsMember({"co_occurrence", "cosine_baseline"}))
      ->capture_default_str();
  eval_cmd->add_flag("--calibrate", calibrate, "report metrics at the max-F1 threshold");
  eval_cmd->add_flag("--corrupt-signs", corrupt_signs,
                     "flip random gradient signs before scoring (bias diagnostic)");
  eval_cmd->add_option("--corruption-seed", corruption_seed)->capture_default_str();
  eval_cmd->add_option("--report", report_path, "write the JSON report here");
  eval_cmd->add_option("--scores", scores_path, "write the per-prompt CSV here");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "evaluate all debiasing variants");
  std::string ab_model, ab_refs_file, ab_dataset, ab_report, ab_compliance = "Sure";
  std::string ab_granularity = "matrix";
  double ab_threshold = 0.5;
  std::size_t ab_workers = 1;
  bool ab_corrupt = false;
  std::uint64_t ab_corruption_seed = 0;
  ablate->add_option("--model", ab_model)->required();
  ablate->add_option("--refs-file", ab_refs_file, "reference prompts JSONL")->required();
  ablate->add_option("--dataset", ab_dataset)->required();
  ablate->add_option("--compliance", ab_compliance)->capture_default_str();
  ablate->add_option("--granularity", ab_granularity)
      ->check(CLI::IsMember({"matrix", "layer", "head"}))
      ->capture_default_str();
  ablate->add_option("--threshold", ab_threshold)->capture_default_str();
  ablate->add_option("--workers", ab_workers)->capture_default_str();
  ablate->add_flag("--corrupt-signs", ab_corrupt);
  ablate->add_option("--corruption-seed", ab_corruption_seed)->capture_default_str();
  ablate->add_option("--report", ab_report);

  // sweep-refs
  auto* sweep_refs = app.add_subcommand("sweep-refs", "sweep the reference-pair count");
  std::string sr_model, sr_pool, sr_dataset, sr_report, sr_compliance = "Sure";
  std::size_t k_min = 1, k_max = 6, samples = 5, sr_workers = 1;
  double sr_threshold = 0.5;
  sweep_refs->add_option("--model", sr_model)->required();
  sweep_refs->add_option("--pool", sr_pool, "reference prompt pool JSONL")->required();
  sweep_refs->add_option("--dataset", sr_dataset)->required();
  sweep_refs->add_option("--k-min", k_min)->capture_default_str();
  sweep_refs->add_option("--k-max", k_max)->capture_default_str();
  sweep_refs->add_option("--samples", samples)->capture_default_str();
  sweep_refs->add_option("--compliance", sr_compliance)->capture_default_str();
  sweep_refs->add_option("--threshold", sr_threshold)->capture_default_str();
  sweep_refs->add_option("--workers", sr_workers)->capture_default_str();
  sweep_refs->add_option("--report", sr_report);

  // sweep-responses
  auto* sweep_resp = app.add_subcommand("sweep-responses",
                                        "sweep compliance response texts");
  std::string sp_model, sp_refs_file, sp_dataset, sp_report;
  std::vector<std::string> responses;
  double sp_threshold = 0.5;
  std::size_t sp_workers = 1;
  sweep_resp->add_option("--model", sp_model)->required();
  sweep_resp->add_option("--refs-file", sp_refs_file)->required();
  sweep_resp->add_option("--dataset", sp_dataset)->required();
  sweep_resp->add_option("--responses", responses,
                         "compliance responses (default: bundled six)");
  sweep_resp->add_option("--threshold", sp_threshold)->capture_default_str();
  sweep_resp->add_option("--workers", sp_workers)->capture_default_str();
  sweep_resp->add_option("--report", sp_report);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      cfg.seed = seed;
      return cmd_train_toy(corpus_path, train_out, cfg, steps, lr, batch);
    }
    if (*build) {
      return cmd_build_refs(model_path, refs_file, refs_out, compliance, granularity,
                            no_norm, no_abs);
    }
    if (*score) {
      if (prompt.empty() && prompts_file.empty()) {
        std::fprintf(stderr, "score: need --prompt or --prompts-file\n");
        return 1;
      }
      return cmd_score(score_model, score_refs, prompt, prompts_file, threshold, method,
                       score_out);
    }
    if (*eval_cmd) {
      RunConfig rc;
      rc.checkpoint_path = eval_model;
      rc.refs_path = eval_refs;
      rc.dataset_path = dataset_path;
      rc.threshold = eval_threshold;
      rc.granularity = eval_granularity;
      rc.method = eval_method;
      rc.workers = workers;
      rc.corrupt_signs = corrupt_signs;
      rc.corruption_seed = corruption_seed;
      rc.seed = seed;
      rc.calibrate = calibrate;
      return cmd_eval(rc, report_path, scores_path);
    }
    if (*ablate) {
      ClassifierConfig config;
      config.threshold = ab_threshold;
      config.granularity = granularity_from_string(ab_granularity);
      config.compliance = ab_compliance;
      EvalOptions options;
      options.workers = ab_workers;
      options.corrupt_signs = ab_corrupt;
      options.corruption_seed = ab_corruption_seed;
      return cmd_ablate(ab_model, ab_refs_file, ab_dataset, config, options, ab_report);
    }
    if (*sweep_refs) {
      ClassifierConfig config;
      config.threshold = sr_threshold;
      config.compliance = sr_compliance;
      EvalOptions options;
      options.workers = sr_workers;
      return cmd_sweep_refs(sr_model, sr_pool, sr_dataset, k_min, k_max, samples, seed,
                            config, options, sr_report);
    }
    if (*sweep_resp) {
      ClassifierConfig config;
      config.threshold = sp_threshold;
      EvalOptions options;
      options.workers = sp_workers;
      return cmd_sweep_responses(sp_model, sp_refs_file, sp_dataset, responses, config,
                                 options, sp_report);
    }
  } catch (const gradcoo::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
