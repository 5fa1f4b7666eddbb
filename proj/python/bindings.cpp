#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "gradcoo/checkpoint.hpp"
#include "gradcoo/eval.hpp"

namespace py = pybind11;
using namespace gradcoo;

PYBIND11_MODULE(_core, m) {
  m.doc() = "gradient co-occurrence unsafe-prompt detection";

  // tokenizer
  m.def("tokenize", &tokenize, py::arg("text"));
  m.def("detokenize", &detokenize, py::arg("ids"));

  // model
  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("vocab_size", &ModelConfig::vocab_size)
      .def_readwrite("d_model", &ModelConfig::d_model)
      .def_readwrite("n_layers", &ModelConfig::n_layers)
      .def_readwrite("n_heads", &ModelConfig::n_heads)
      .def_readwrite("d_ff", &ModelConfig::d_ff)
      .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
      .def_readwrite("seed", &ModelConfig::seed)
      .def("validate", &ModelConfig::validate);

  py::class_<ModelWeights>(m, "ModelWeights");

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("weights", &TrainResult::weights)
      .def_readonly("initial_loss", &TrainResult::initial_loss)
      .def_readonly("final_loss", &TrainResult::final_loss);

  m.def("init_weights", &init_weights, py::arg("config"));
  m.def("train_toy", &train_toy, py::arg("config"), py::arg("corpus"), py::arg("steps"),
        py::arg("lr"), py::arg("batch_size") = 8,
        py::call_guard<py::gil_scoped_release>());
  m.def(
      "compliance_loss_value",
      [](const ModelWeights& w, const ModelConfig& cfg, const std::string& prompt,
         const std::string& compliance) {
        return compliance_loss(w, cfg, prompt, compliance).value();
      },
      py::arg("weights"), py::arg("config"), py::arg("prompt"), py::arg("compliance"));
  m.def(
      "param_gradients",
      [](const ModelWeights& w, const ModelConfig& cfg, const std::string& prompt,
         const std::string& compliance, const std::string& granularity) {
        const ComponentRegistry reg =
            ComponentRegistry::build(cfg, granularity_from_string(granularity));
        return param_gradients(w, cfg, prompt, compliance, reg);
      },
      py::arg("weights"), py::arg("config"), py::arg("prompt"), py::arg("compliance"),
      py::arg("granularity") = "matrix");

  // checkpoints
  m.def("save_checkpoint", &save_checkpoint, py::arg("path"), py::arg("weights"),
        py::arg("config"));
  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def("weights_digest", &weights_digest, py::arg("weights"), py::arg("config"));

  // references and scoring
  py::class_<ProcessingOptions>(m, "ProcessingOptions")
      .def(py::init<>())
      .def_readwrite("apply_norm", &ProcessingOptions::apply_norm)
      .def_readwrite("apply_abs", &ProcessingOptions::apply_abs)
      .def_readwrite("degenerate_epsilon", &ProcessingOptions::degenerate_epsilon);

  py::class_<ProcessedVector>(m, "ProcessedVector")
      .def_readonly("values", &ProcessedVector::values)
      .def_readonly("degenerate", &ProcessedVector::degenerate);

  m.def("process_component", &process_component, py::arg("raw"), py::arg("options"));
  m.def("co_occurrence", &co_occurrence, py::arg("a"), py::arg("b"));
  m.def("relative_unsafe", &relative_unsafe, py::arg("s_u"), py::arg("s_s"),
        py::arg("epsilon") = 1e-12);
  m.def("aggregate_scores", &aggregate_scores, py::arg("component_scores"));

  py::class_<ReferenceProvenance>(m, "ReferenceProvenance")
      .def_readonly("safe_prompts", &ReferenceProvenance::safe_prompts)
      .def_readonly("unsafe_prompts", &ReferenceProvenance::unsafe_prompts)
      .def_readonly("compliance", &ReferenceProvenance::compliance)
      .def_readonly("model_digest", &ReferenceProvenance::model_digest);

  py::class_<ReferenceSet>(m, "ReferenceSet")
      .def_readonly("safe", &ReferenceSet::safe)
      .def_readonly("unsafe", &ReferenceSet::unsafe)
      .def_readonly("options", &ReferenceSet::options)
      .def_readonly("provenance", &ReferenceSet::provenance);

  m.def(
      "build_references",
      [](const ModelWeights& w, const ModelConfig& cfg,
         const std::vector<std::string>& safe, const std::vector<std::string>& unsafe,
         const std::string& compliance, const std::string& granularity,
         const ProcessingOptions& options) {
        const ComponentRegistry reg =
            ComponentRegistry::build(cfg, granularity_from_string(granularity));
        return build_references(w, cfg, safe, unsafe, compliance, reg, options);
      },
      py::arg("weights"), py::arg("config"), py::arg("safe_prompts"),
      py::arg("unsafe_prompts"), py::arg("compliance") = "Sure",
      py::arg("granularity") = "matrix", py::arg("options") = ProcessingOptions{},
      py::call_guard<py::gil_scoped_release>());
  m.def("save_references", &save_references, py::arg("path"), py::arg("refs"));
  m.def("load_references", &load_references, py::arg("path"));
  m.def("references_digest", &references_digest, py::arg("refs"));

  py::enum_<Decision>(m, "Decision")
      .value("SAFE", Decision::Safe)
      .value("UNSAFE", Decision::Unsafe);

  py::enum_<Granularity>(m, "Granularity")
      .value("MATRIX", Granularity::Matrix)
      .value("LAYER", Granularity::Layer)
      .value("HEAD", Granularity::Head);

  py::class_<ComponentScore>(m, "ComponentScore")
      .def_readonly("co_unsafe", &ComponentScore::co_unsafe)
      .def_readonly("co_safe", &ComponentScore::co_safe)
      .def_readonly("relative", &ComponentScore::relative)
      .def_readonly("degenerate", &ComponentScore::degenerate);

  py::class_<ScoreBreakdown>(m, "ScoreBreakdown")
      .def_readonly("per_component", &ScoreBreakdown::per_component)
      .def_readonly("aggregate", &ScoreBreakdown::aggregate)
      .def_readonly("threshold", &ScoreBreakdown::threshold)
      .def_readonly("decision", &ScoreBreakdown::decision);

  py::class_<ClassifierConfig>(m, "ClassifierConfig")
      .def(py::init<>())
      .def_readwrite("threshold", &ClassifierConfig::threshold)
      .def_readwrite("granularity", &ClassifierConfig::granularity)
      .def_readwrite("options", &ClassifierConfig::options)
      .def_readwrite("compliance", &ClassifierConfig::compliance);

  m.def("score_prompt", &score_prompt, py::arg("weights"), py::arg("config"),
        py::arg("prompt"), py::arg("refs"), py::arg("classifier") = ClassifierConfig{},
        py::call_guard<py::gil_scoped_release>());
  m.def("cosine_baseline_score", &cosine_baseline_score, py::arg("weights"),
        py::arg("config"), py::arg("prompt"), py::arg("refs"),
        py::arg("classifier") = ClassifierConfig{},
        py::call_guard<py::gil_scoped_release>());

  // metrics
  py::class_<ConfusionCounts>(m, "ConfusionCounts")
      .def_readonly("tp", &ConfusionCounts::tp)
      .def_readonly("fp", &ConfusionCounts::fp)
      .def_readonly("tn", &ConfusionCounts::tn)
      .def_readonly("fn", &ConfusionCounts::fn);

  py::class_<PRPoint>(m, "PRPoint")
      .def_readonly("threshold", &PRPoint::threshold)
      .def_readonly("precision", &PRPoint::precision)
      .def_readonly("recall", &PRPoint::recall);

  py::class_<MetricsReport>(m, "MetricsReport")
      .def_readonly("auprc", &MetricsReport::auprc)
      .def_readonly("precision", &MetricsReport::precision)
      .def_readonly("recall", &MetricsReport::recall)
      .def_readonly("f1", &MetricsReport::f1)
      .def_readonly("threshold", &MetricsReport::threshold)
      .def_readonly("counts", &MetricsReport::counts)
      .def_readonly("curve", &MetricsReport::curve);

  m.def("auprc", &auprc, py::arg("scores"), py::arg("labels"));
  m.def("prf1_at_threshold", &prf1_at_threshold, py::arg("scores"), py::arg("labels"),
        py::arg("threshold"));
  m.def("calibrate_threshold", &calibrate_threshold, py::arg("scores"), py::arg("labels"));

  // evaluation harnesses
  py::class_<LabeledPrompt>(m, "LabeledPrompt")
      .def(py::init([](std::string prompt, bool unsafe, std::string id) {
             LabeledPrompt lp;
             lp.prompt = std::move(prompt);
             lp.unsafe = unsafe;
             lp.id = std::move(id);
             return lp;
           }),
           py::arg("prompt"), py::arg("unsafe"), py::arg("id") = "")
      .def_readwrite("prompt", &LabeledPrompt::prompt)
      .def_readwrite("unsafe", &LabeledPrompt::unsafe)
      .def_readwrite("id", &LabeledPrompt::id);

  m.def("load_jsonl", &load_jsonl, py::arg("path"));

  py::enum_<ScoreMethod>(m, "ScoreMethod")
      .value("CO_OCCURRENCE", ScoreMethod::CoOccurrence)
      .value("COSINE_BASELINE", ScoreMethod::CosineBaseline);

  py::class_<EvalOptions>(m, "EvalOptions")
      .def(py::init<>())
      .def_readwrite("workers", &EvalOptions::workers)
      .def_readwrite("corrupt_signs", &EvalOptions::corrupt_signs)
      .def_readwrite("corruption_seed", &EvalOptions::corruption_seed)
      .def_readwrite("method", &EvalOptions::method);

  py::class_<PromptScore>(m, "PromptScore")
      .def_readonly("id", &PromptScore::id)
      .def_readonly("score", &PromptScore::score)
      .def_readonly("label_unsafe", &PromptScore::label_unsafe)
      .def_readonly("decision", &PromptScore::decision);

  py::class_<EvalRun>(m, "EvalRun")
      .def_readonly("report", &EvalRun::report)
      .def_readonly("scores", &EvalRun::scores);

  m.def("run_eval", &run_eval, py::arg("weights"), py::arg("config"), py::arg("refs"),
        py::arg("dataset"), py::arg("classifier") = ClassifierConfig{},
        py::arg("options") = EvalOptions{}, py::call_guard<py::gil_scoped_release>());

  py::class_<ReferencePrompts>(m, "ReferencePrompts")
      .def(py::init<>())
      .def_readwrite("safe", &ReferencePrompts::safe)
      .def_readwrite("unsafe", &ReferencePrompts::unsafe);

  m.def("load_reference_prompts", &load_reference_prompts, py::arg("path"));

  py::class_<AblationRow>(m, "AblationRow")
      .def_readonly("variant", &AblationRow::variant)
      .def_readonly("options", &AblationRow::options)
      .def_readonly("report", &AblationRow::report);

  m.def("run_ablation", &run_ablation, py::arg("weights"), py::arg("config"),
        py::arg("ref_prompts"), py::arg("dataset"),
        py::arg("classifier") = ClassifierConfig{}, py::arg("options") = EvalOptions{},
        py::call_guard<py::gil_scoped_release>());

  py::class_<SweepPoint>(m, "SweepPoint")
      .def_readonly("k", &SweepPoint::k)
      .def_readonly("mean_auprc", &SweepPoint::mean_auprc)
      .def_readonly("std_auprc", &SweepPoint::std_auprc)
      .def_readonly("samples", &SweepPoint::samples);

  m.def("sweep_reference_count", &sweep_reference_count, py::arg("weights"),
        py::arg("config"), py::arg("pool"), py::arg("dataset"), py::arg("k_min") = 1,
        py::arg("k_max") = 6, py::arg("samples") = 5, py::arg("seed") = 0,
        py::arg("classifier") = ClassifierConfig{}, py::arg("options") = EvalOptions{},
        py::call_guard<py::gil_scoped_release>());

  py::class_<ResponseRow>(m, "ResponseRow")
      .def_readonly("response", &ResponseRow::response)
      .def_readonly("auprc", &ResponseRow::auprc);

  py::class_<ResponseSweep>(m, "ResponseSweep")
      .def_readonly("rows", &ResponseSweep::rows)
      .def_readonly("mean_auprc", &ResponseSweep::mean_auprc)
      .def_readonly("std_auprc", &ResponseSweep::std_auprc);

  m.def("sweep_compliance_responses", &sweep_compliance_responses, py::arg("weights"),
        py::arg("config"), py::arg("responses"), py::arg("ref_prompts"),
        py::arg("dataset"), py::arg("classifier") = ClassifierConfig{},
        py::arg("options") = EvalOptions{}, py::call_guard<py::gil_scoped_release>());

  m.def("default_compliance_responses",
        [] { return default_compliance_responses(); });

  m.attr("__version__") = "0.1.0";
}
