#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gradcoo/metrics.hpp"
#include "gradcoo/scoring.hpp"

namespace gradcoo {

struct LabeledPrompt {
  std::string prompt;
  bool unsafe = false;
  std::string id;  // optional; scoring falls back to the record index
};

// JSONL with fields {"prompt", "label"[, "id"]}; label is "safe" or "unsafe".
// Unknown fields are ignored; errors carry the 1-based line number.
std::vector<LabeledPrompt> load_jsonl(const std::filesystem::path& path);

enum class ScoreMethod { CoOccurrence, CosineBaseline };

std::string to_string(ScoreMethod m);
ScoreMethod score_method_from_string(const std::string& s);

struct EvalOptions {
  std::size_t workers = 1;
  // Diagnostic mode: multiplies every prompt-gradient coordinate by a seeded
  // random sign before scoring. Co-occurrence scoring with abs on is exactly
  // invariant to this; sign-sensitive variants are not, which turns the
  // directional-bias argument into a runnable experiment.
  bool corrupt_signs = false;
  std::uint64_t corruption_seed = 0;
  ScoreMethod method = ScoreMethod::CoOccurrence;
};

struct PromptScore {
  std::string id;
  double score = 0.0;
  bool label_unsafe = false;
  Decision decision = Decision::Safe;
};

struct EvalRun {
  MetricsReport report;
  std::vector<PromptScore> scores;
};

// Scores every prompt of the dataset against the references and reports
// AUPRC plus P/R/F1 at config.threshold. Needs both classes present.
// Scoring runs across `options.workers` threads; results are identical for
// any worker count.
EvalRun run_eval(const ModelWeights& weights, const ModelConfig& cfg,
                 const ReferenceSet& refs, const std::vector<LabeledPrompt>& dataset,
                 const ClassifierConfig& config, const EvalOptions& options);

// ---------------------------------------------------------------------------
// Experiment harnesses
// ---------------------------------------------------------------------------

struct AblationRow {
  std::string variant;  // full | no_norm | no_abs | no_norm_no_abs
  ProcessingOptions options;
  MetricsReport report;
};

// Rebuilds references under each debiasing combination and evaluates each.
std::vector<AblationRow> run_ablation(const ModelWeights& weights, const ModelConfig& cfg,
                                      const ReferencePrompts& ref_prompts,
                                      const std::vector<LabeledPrompt>& dataset,
                                      const ClassifierConfig& config,
                                      const EvalOptions& options);

struct SweepPoint {
  std::size_t k = 0;
  double mean_auprc = 0.0;
  double std_auprc = 0.0;  // population standard deviation
  std::vector<double> samples;
};

// For each k, draws `samples` seeded k-per-class subsets of the pool, builds
// references from each draw and evaluates. Deterministic given `seed`.
std::vector<SweepPoint> sweep_reference_count(
    const ModelWeights& weights, const ModelConfig& cfg, const ReferencePrompts& pool,
    const std::vector<LabeledPrompt>& dataset, std::size_t k_min, std::size_t k_max,
    std::size_t samples, std::uint64_t seed, const ClassifierConfig& config,
    const EvalOptions& options);

struct ResponseRow {
  std::string response;
  double auprc = 0.0;
};

struct ResponseSweep {
  std::vector<ResponseRow> rows;
  double mean_auprc = 0.0;
  double std_auprc = 0.0;
};

// Rebuilds references (and prompt gradients) per compliance response.
ResponseSweep sweep_compliance_responses(const ModelWeights& weights,
                                         const ModelConfig& cfg,
                                         const std::vector<std::string>& responses,
                                         const ReferencePrompts& ref_prompts,
                                         const std::vector<LabeledPrompt>& dataset,
                                         const ClassifierConfig& config,
                                         const EvalOptions& options);

// The bundled affirmative responses used by the response sweep by default.
const std::vector<std::string>& default_compliance_responses();

// ---------------------------------------------------------------------------
// Reports and reproducibility
// ---------------------------------------------------------------------------

// Fully resolved inputs of one evaluation run. Embedded verbatim into every
// report so the run can be re-executed from the report alone.
struct RunConfig {
  std::string checkpoint_path;
  std::string refs_path;
  std::string dataset_path;
  double threshold = 0.5;
  std::string granularity = "matrix";
  std::string method = "co_occurrence";
  std::size_t workers = 1;
  bool corrupt_signs = false;
  std::uint64_t corruption_seed = 0;
  std::uint64_t seed = 0;
  bool calibrate = false;
};

std::string run_config_to_json_string(const RunConfig& rc);
RunConfig run_config_from_json_string(const std::string& text);

struct EvalProvenance {
  std::string model_digest;
  std::string refs_digest;
  std::string dataset_digest;
};

struct EvalOutcome {
  RunConfig config;
  EvalProvenance provenance;
  EvalRun run;
};

// Loads everything named by the config and evaluates. The entry point behind
// the eval subcommand and the report re-execution check.
EvalOutcome run_eval_from_config(const RunConfig& rc);

// Deterministic JSON: resolved config, input digests, metrics, curve.
// No timestamps; identical runs serialize to identical bytes.
std::string eval_report_json(const EvalOutcome& outcome);

// One row per prompt: id, score, label, decision.
std::string scores_csv(const EvalRun& run);

void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace gradcoo
