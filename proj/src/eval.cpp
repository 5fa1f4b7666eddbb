#include "gradcoo/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "gradcoo/checkpoint.hpp"
#include "gradcoo/errors.hpp"
#include "gradcoo/rng.hpp"
#include "json.hpp"

namespace gradcoo {

std::vector<LabeledPrompt> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dataset file " + path.string());
  std::vector<LabeledPrompt> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("prompt") ||
        !j["prompt"].is_string() || !j.contains("label") || !j["label"].is_string()) {
      throw ParseError("dataset line " + std::to_string(lineno) +
                       ": expected {\"prompt\": string, \"label\": string}");
    }
    LabeledPrompt lp;
    lp.prompt = j["prompt"].get<std::string>();
    const std::string label = j["label"].get<std::string>();
    if (label == "unsafe") {
      lp.unsafe = true;
    } else if (label == "safe") {
      lp.unsafe = false;
    } else {
      throw LabelError("dataset line " + std::to_string(lineno) + ": unknown label '" +
                       label + "'");
    }
    if (j.contains("id") && j["id"].is_string()) lp.id = j["id"].get<std::string>();
    out.push_back(std::move(lp));
  }
  return out;
}

std::string to_string(ScoreMethod m) {
  return m == ScoreMethod::CosineBaseline ? "cosine_baseline" : "co_occurrence";
}

ScoreMethod score_method_from_string(const std::string& s) {
  if (s == "co_occurrence") return ScoreMethod::CoOccurrence;
  if (s == "cosine_baseline") return ScoreMethod::CosineBaseline;
  throw ContractError("unknown scoring method '" + s +
                      "' (expected co_occurrence|cosine_baseline)");
}

namespace {

// Raw per-prompt gradient maps over shared read-only weights. Each worker
// builds its own graphs; the output slot per prompt makes results identical
// for any worker count.
std::vector<GradientMap> prompt_gradient_maps(const ModelWeights& weights,
                                              const ModelConfig& cfg,
                                              const ComponentRegistry& registry,
                                              const std::vector<std::string>& prompts,
                                              const std::string& compliance,
                                              std::size_t workers) {
  std::vector<GradientMap> maps(prompts.size());
  workers = std::max<std::size_t>(1, std::min(workers, prompts.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      maps[i] = param_gradients(weights, cfg, prompts[i], compliance, registry);
    }
    return maps;
  }

  std::vector<std::thread> pool;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < prompts.size(); i += workers) {
          maps[i] = param_gradients(weights, cfg, prompts[i], compliance, registry);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return maps;
}

// Seeded per-prompt random sign pattern over every gradient coordinate.
void corrupt_signs_in_place(std::vector<GradientMap>& maps, std::uint64_t seed) {
  for (std::size_t i = 0; i < maps.size(); ++i) {
    Rng rng(mix_seed(seed, i + 1));
    for (auto& [component, vec] : maps[i]) {
      for (double& v : vec) {
        if (rng.next_bool()) v = -v;
      }
    }
  }
}

std::vector<int> labels_of(const std::vector<LabeledPrompt>& dataset) {
  std::vector<int> labels;
  labels.reserve(dataset.size());
  for (const LabeledPrompt& lp : dataset) labels.push_back(lp.unsafe ? 1 : 0);
  return labels;
}

void require_both_classes(const std::vector<LabeledPrompt>& dataset) {
  if (dataset.empty()) throw ContractError("dataset is empty");
  bool has_pos = false, has_neg = false;
  for (const LabeledPrompt& lp : dataset) (lp.unsafe ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg) {
    throw UndefinedMetricError(
        "evaluation needs both classes present, dataset has only one");
  }
}

EvalRun eval_gradient_maps(const std::vector<GradientMap>& maps,
                           const std::vector<LabeledPrompt>& dataset,
                           const ReferenceSet& refs, double threshold,
                           ScoreMethod method) {
  EvalRun run;
  run.scores.reserve(dataset.size());
  std::vector<double> scores;
  scores.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const ScoreBreakdown sb = method == ScoreMethod::CosineBaseline
                                  ? cosine_score_gradient_map(maps[i], refs, threshold)
                                  : score_gradient_map(maps[i], refs, threshold);
    PromptScore ps;
    ps.id = dataset[i].id.empty() ? "p" + std::to_string(i) : dataset[i].id;
    ps.score = sb.aggregate;
    ps.label_unsafe = dataset[i].unsafe;
    ps.decision = sb.decision;
    run.scores.push_back(std::move(ps));
    scores.push_back(sb.aggregate);
  }
  run.report = evaluate_scores(scores, labels_of(dataset), threshold);
  return run;
}

std::vector<std::string> prompts_of(const std::vector<LabeledPrompt>& dataset) {
  std::vector<std::string> prompts;
  prompts.reserve(dataset.size());
  for (const LabeledPrompt& lp : dataset) prompts.push_back(lp.prompt);
  return prompts;
}

struct MeanStd {
  double mean = 0.0;
  double std_dev = 0.0;
};

MeanStd population_stats(const std::vector<double>& xs) {
  MeanStd ms;
  for (double x : xs) ms.mean += x;
  ms.mean /= static_cast<double>(xs.size());
  for (double x : xs) ms.std_dev += (x - ms.mean) * (x - ms.mean);
  ms.std_dev = std::sqrt(ms.std_dev / static_cast<double>(xs.size()));
  return ms;
}

}  // namespace

EvalRun run_eval(const ModelWeights& weights, const ModelConfig& cfg,
                 const ReferenceSet& refs, const std::vector<LabeledPrompt>& dataset,
                 const ClassifierConfig& config, const EvalOptions& options) {
  require_both_classes(dataset);
  check_reference_compatibility(weights, cfg, refs, config);
  const ComponentRegistry registry =
      ComponentRegistry::build(cfg, refs.provenance.granularity);
  std::vector<GradientMap> maps =
      prompt_gradient_maps(weights, cfg, registry, prompts_of(dataset),
                           refs.provenance.compliance, options.workers);
  if (options.corrupt_signs) corrupt_signs_in_place(maps, options.corruption_seed);
  return eval_gradient_maps(maps, dataset, refs, config.threshold, options.method);
}

std::vector<AblationRow> run_ablation(const ModelWeights& weights, const ModelConfig& cfg,
                                      const ReferencePrompts& ref_prompts,
                                      const std::vector<LabeledPrompt>& dataset,
                                      const ClassifierConfig& config,
                                      const EvalOptions& options) {
  require_both_classes(dataset);
  const ComponentRegistry registry = ComponentRegistry::build(cfg, config.granularity);

  // Prompt gradients do not depend on the debiasing flags, so compute them
  // once and rescore per variant.
  std::vector<GradientMap> maps = prompt_gradient_maps(
      weights, cfg, registry, prompts_of(dataset), config.compliance, options.workers);
  if (options.corrupt_signs) corrupt_signs_in_place(maps, options.corruption_seed);

  const std::vector<std::pair<std::string, std::pair<bool, bool>>> variants = {
      {"full", {true, true}},
      {"no_norm", {false, true}},
      {"no_abs", {true, false}},
      {"no_norm_no_abs", {false, false}},
  };

  std::vector<AblationRow> rows;
  for (const auto& [name, flags] : variants) {
    ProcessingOptions variant_options = config.options;
    variant_options.apply_norm = flags.first;
    variant_options.apply_abs = flags.second;
    const ReferenceSet refs =
        build_references(weights, cfg, ref_prompts.safe, ref_prompts.unsafe,
                         config.compliance, registry, variant_options);
    AblationRow row;
    row.variant = name;
    row.options = variant_options;
    row.report = eval_gradient_maps(maps, dataset, refs, config.threshold,
                                    ScoreMethod::CoOccurrence)
                     .report;
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SweepPoint> sweep_reference_count(
    const ModelWeights& weights, const ModelConfig& cfg, const ReferencePrompts& pool,
    const std::vector<LabeledPrompt>& dataset, std::size_t k_min, std::size_t k_max,
    std::size_t samples, std::uint64_t seed, const ClassifierConfig& config,
    const EvalOptions& options) {
  require_both_classes(dataset);
  if (k_min == 0 || k_min > k_max) throw ContractError("invalid k range");
  if (samples == 0) throw ContractError("sweep needs at least one sample per k");
  if (pool.safe.size() < k_max || pool.unsafe.size() < k_max) {
    throw ContractError("reference pool too small: need at least " +
                        std::to_string(k_max) + " prompts per class");
  }

  const ComponentRegistry registry = ComponentRegistry::build(cfg, config.granularity);
  std::vector<GradientMap> maps = prompt_gradient_maps(
      weights, cfg, registry, prompts_of(dataset), config.compliance, options.workers);
  if (options.corrupt_signs) corrupt_signs_in_place(maps, options.corruption_seed);
  const std::vector<int> labels = labels_of(dataset);

  std::vector<SweepPoint> points;
  for (std::size_t k = k_min; k <= k_max; ++k) {
    SweepPoint point;
    point.k = k;
    for (std::size_t s = 0; s < samples; ++s) {
      Rng safe_rng(mix_seed(seed, k, s, 1));
      Rng unsafe_rng(mix_seed(seed, k, s, 2));
      std::vector<std::string> safe_draw, unsafe_draw;
      for (std::size_t i : safe_rng.sample_indices(pool.safe.size(), k)) {
        safe_draw.push_back(pool.safe[i]);
      }
      for (std::size_t i : unsafe_rng.sample_indices(pool.unsafe.size(), k)) {
        unsafe_draw.push_back(pool.unsafe[i]);
      }
      const ReferenceSet refs = build_references(weights, cfg, safe_draw, unsafe_draw,
                                                 config.compliance, registry,
                                                 config.options);
      const EvalRun run =
          eval_gradient_maps(maps, dataset, refs, config.threshold, options.method);
      point.samples.push_back(run.report.auprc);
    }
    const MeanStd ms = population_stats(point.samples);
    point.mean_auprc = ms.mean;
    point.std_auprc = ms.std_dev;
    points.push_back(std::move(point));
  }
  return points;
}

ResponseSweep sweep_compliance_responses(const ModelWeights& weights,
                                         const ModelConfig& cfg,
                                         const std::vector<std::string>& responses,
                                         const ReferencePrompts& ref_prompts,
                                         const std::vector<LabeledPrompt>& dataset,
                                         const ClassifierConfig& config,
                                         const EvalOptions& options) {
  require_both_classes(dataset);
  if (responses.empty()) throw ContractError("no compliance responses given");
  const ComponentRegistry registry = ComponentRegistry::build(cfg, config.granularity);

  ResponseSweep sweep;
  std::vector<double> auprcs;
  for (const std::string& response : responses) {
    // both the references and the prompt gradients move with the response
    std::vector<GradientMap> maps = prompt_gradient_maps(
        weights, cfg, registry, prompts_of(dataset), response, options.workers);
    if (options.corrupt_signs) corrupt_signs_in_place(maps, options.corruption_seed);
    const ReferenceSet refs =
        build_references(weights, cfg, ref_prompts.safe, ref_prompts.unsafe, response,
                         registry, config.options);
    const EvalRun run =
        eval_gradient_maps(maps, dataset, refs, config.threshold, options.method);
    sweep.rows.push_back({response, run.report.auprc});
    auprcs.push_back(run.report.auprc);
  }
  const MeanStd ms = population_stats(auprcs);
  sweep.mean_auprc = ms.mean;
  sweep.std_auprc = ms.std_dev;
  return sweep;
}

const std::vector<std::string>& default_compliance_responses() {
  static const std::vector<std::string> responses = {
      "Sure",
      "Yes",
      "Sure, I would be delighted to assist you.",
      "Of course, I will help you.",
      "Absolutely, I'm happy to help.",
      "Yes, I'm happy to provide assistance.",
  };
  return responses;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

nlohmann::json run_config_json(const RunConfig& rc) {
  nlohmann::json j;
  j["checkpoint_path"] = rc.checkpoint_path;
  j["refs_path"] = rc.refs_path;
  j["dataset_path"] = rc.dataset_path;
  j["threshold"] = rc.threshold;
  j["granularity"] = rc.granularity;
  j["method"] = rc.method;
  j["workers"] = rc.workers;
  j["corrupt_signs"] = rc.corrupt_signs;
  j["corruption_seed"] = rc.corruption_seed;
  j["seed"] = rc.seed;
  j["calibrate"] = rc.calibrate;
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig rc;
  try {
    rc.checkpoint_path = j.at("checkpoint_path").get<std::string>();
    rc.refs_path = j.at("refs_path").get<std::string>();
    rc.dataset_path = j.at("dataset_path").get<std::string>();
    rc.threshold = j.at("threshold").get<double>();
    rc.granularity = j.at("granularity").get<std::string>();
    rc.method = j.at("method").get<std::string>();
    rc.workers = j.at("workers").get<std::size_t>();
    rc.corrupt_signs = j.at("corrupt_signs").get<bool>();
    rc.corruption_seed = j.at("corruption_seed").get<std::uint64_t>();
    rc.seed = j.at("seed").get<std::uint64_t>();
    rc.calibrate = j.at("calibrate").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("run config record is incomplete: " + std::string(e.what()));
  }
  return rc;
}

}  // namespace

std::string run_config_to_json_string(const RunConfig& rc) {
  return run_config_json(rc).dump();
}

RunConfig run_config_from_json_string(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw FormatError("run config is not valid JSON");
  return run_config_from_json(j);
}

EvalOutcome run_eval_from_config(const RunConfig& rc) {
  EvalOutcome outcome;
  outcome.config = rc;

  auto [weights, cfg] = load_checkpoint(rc.checkpoint_path);
  const ReferenceSet refs = load_references(rc.refs_path);
  const std::vector<LabeledPrompt> dataset = load_jsonl(rc.dataset_path);

  ClassifierConfig config;
  config.threshold = rc.threshold;
  config.granularity = granularity_from_string(rc.granularity);
  config.options = refs.options;
  config.compliance = refs.provenance.compliance;

  EvalOptions options;
  options.workers = rc.workers;
  options.corrupt_signs = rc.corrupt_signs;
  options.corruption_seed = rc.corruption_seed;
  options.method = score_method_from_string(rc.method);

  outcome.run = run_eval(weights, cfg, refs, dataset, config, options);
  if (rc.calibrate) {
    std::vector<double> scores;
    for (const PromptScore& ps : outcome.run.scores) scores.push_back(ps.score);
    const double t_star = calibrate_threshold(scores, labels_of(dataset));
    MetricsReport at_best = evaluate_scores(scores, labels_of(dataset), t_star);
    outcome.run.report = at_best;
    for (PromptScore& ps : outcome.run.scores) {
      ps.decision = ps.score > t_star ? Decision::Unsafe : Decision::Safe;
    }
  }

  outcome.provenance.model_digest = weights_digest(weights, cfg);
  outcome.provenance.refs_digest = references_digest(refs);
  outcome.provenance.dataset_digest = file_digest(rc.dataset_path);
  return outcome;
}

std::string eval_report_json(const EvalOutcome& outcome) {
  nlohmann::json j;
  j["kind"] = "gradcoo_eval_report";
  j["config"] = run_config_json(outcome.config);
  j["provenance"] = {{"model_digest", outcome.provenance.model_digest},
                     {"refs_digest", outcome.provenance.refs_digest},
                     {"dataset_digest", outcome.provenance.dataset_digest}};
  const MetricsReport& r = outcome.run.report;
  j["metrics"] = {{"auprc", r.auprc},      {"precision", r.precision},
                  {"recall", r.recall},    {"f1", r.f1},
                  {"threshold", r.threshold},
                  {"counts",
                   {{"tp", r.counts.tp},
                    {"fp", r.counts.fp},
                    {"tn", r.counts.tn},
                    {"fn", r.counts.fn}}}};
  nlohmann::json curve = nlohmann::json::array();
  for (const PRPoint& p : r.curve) {
    curve.push_back({{"threshold", p.threshold},
                     {"precision", p.precision},
                     {"recall", p.recall}});
  }
  j["curve"] = std::move(curve);
  j["num_prompts"] = outcome.run.scores.size();
  return j.dump(2) + "\n";
}

std::string scores_csv(const EvalRun& run) {
  std::string out = "id,score,label,decision\n";
  char buf[64];
  for (const PromptScore& ps : run.scores) {
    std::snprintf(buf, sizeof(buf), "%.17g", ps.score);
    out += ps.id;
    out += ',';
    out += buf;
    out += ',';
    out += ps.label_unsafe ? "unsafe" : "safe";
    out += ',';
    out += to_string(ps.decision);
    out += '\n';
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw FormatError("failed writing " + path.string());
}

}  // namespace gradcoo
