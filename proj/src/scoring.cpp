#include "gradcoo/scoring.hpp"

#include <cmath>

#include "gradcoo/checkpoint.hpp"
#include "gradcoo/errors.hpp"

namespace gradcoo {

double co_occurrence(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw DimensionError("co_occurrence length mismatch: " + std::to_string(a.size()) +
                         " vs " + std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double relative_unsafe(double s_u, double s_s, double epsilon) {
  const double denom = s_u + s_s;
  if (std::fabs(denom) < epsilon) return 0.5;
  const double ratio = s_u / denom;
  if (ratio >= 0.5) return ratio;
  return 1.0 - s_s / denom;
}

double aggregate_scores(const std::vector<double>& component_scores) {
  if (component_scores.empty()) {
    throw ContractError("aggregate_scores: no component scores");
  }
  double offset = 0.0;
  for (double s : component_scores) offset += s - 0.5;
  offset /= static_cast<double>(component_scores.size());
  constexpr double kGrid = 9007199254740992.0;  // 2^53
  offset = std::nearbyint(offset * kGrid) / kGrid;
  return 0.5 + offset;
}

namespace {

void check_component_sets(const GradientMap& raw, const ReferenceSet& refs) {
  if (raw.size() != refs.safe.size()) {
    throw ReferenceIncompatibilityError(
        "prompt gradients cover " + std::to_string(raw.size()) +
        " components, references cover " + std::to_string(refs.safe.size()));
  }
  for (const auto& [component, vec] : raw) {
    const auto it = refs.safe.find(component);
    if (it == refs.safe.end() || it->second.size() != vec.size()) {
      throw ReferenceIncompatibilityError("component '" + component +
                                          "' does not match the reference set");
    }
  }
}

ScoreBreakdown finish(std::map<std::string, ComponentScore> per_component,
                      double threshold) {
  ScoreBreakdown result;
  result.per_component = std::move(per_component);
  std::vector<double> votes;
  votes.reserve(result.per_component.size());
  for (const auto& [component, score] : result.per_component) {
    votes.push_back(score.relative);
  }
  result.aggregate = aggregate_scores(votes);
  result.threshold = threshold;
  result.decision = result.aggregate > threshold ? Decision::Unsafe : Decision::Safe;
  return result;
}

}  // namespace

void check_reference_compatibility(const ModelWeights& weights, const ModelConfig& cfg,
                                   const ReferenceSet& refs,
                                   const ClassifierConfig& config) {
  if (refs.provenance.model_digest != weights_digest(weights, cfg)) {
    throw ReferenceIncompatibilityError(
        "references were built against model " + refs.provenance.model_digest +
        ", not the one being scored");
  }
  if (refs.provenance.granularity != config.granularity) {
    throw ReferenceIncompatibilityError(
        "references use granularity " + to_string(refs.provenance.granularity) +
        ", classifier is configured for " + to_string(config.granularity));
  }
}

ScoreBreakdown score_gradient_map(const GradientMap& raw, const ReferenceSet& refs,
                                  double threshold) {
  check_component_sets(raw, refs);
  const double eps = refs.options.degenerate_epsilon;
  std::map<std::string, ComponentScore> per_component;
  for (const auto& [component, vec] : raw) {
    const ProcessedVector processed = process_component(vec, refs.options);
    ComponentScore cs;
    cs.co_unsafe = co_occurrence(processed.values, refs.unsafe.at(component));
    cs.co_safe = co_occurrence(processed.values, refs.safe.at(component));
    cs.relative = relative_unsafe(cs.co_unsafe, cs.co_safe, eps);
    cs.degenerate = std::fabs(cs.co_unsafe + cs.co_safe) < eps;
    per_component.emplace(component, cs);
  }
  return finish(std::move(per_component), threshold);
}

ScoreBreakdown score_prompt(const ModelWeights& weights, const ModelConfig& cfg,
                            const std::string& prompt, const ReferenceSet& refs,
                            const ClassifierConfig& config) {
  check_reference_compatibility(weights, cfg, refs, config);
  const ComponentRegistry registry =
      ComponentRegistry::build(cfg, refs.provenance.granularity);
  const GradientMap raw =
      param_gradients(weights, cfg, prompt, refs.provenance.compliance, registry);
  return score_gradient_map(raw, refs, config.threshold);
}

ScoreBreakdown cosine_score_gradient_map(const GradientMap& raw, const ReferenceSet& refs,
                                         double threshold) {
  if (refs.options.apply_norm || refs.options.apply_abs) {
    throw ContractError(
        "cosine baseline needs references built with normalization and abs disabled");
  }
  check_component_sets(raw, refs);
  const double eps = refs.options.degenerate_epsilon;
  std::map<std::string, ComponentScore> per_component;
  for (const auto& [component, vec] : raw) {
    const std::vector<double>& unsafe_ref = refs.unsafe.at(component);
    ComponentScore cs;
    cs.co_unsafe = co_occurrence(vec, unsafe_ref);
    cs.co_safe = co_occurrence(vec, refs.safe.at(component));
    const double norm_p = std::sqrt(co_occurrence(vec, vec));
    const double norm_u = std::sqrt(co_occurrence(unsafe_ref, unsafe_ref));
    if (norm_p < eps || norm_u < eps) {
      cs.relative = 0.5;
      cs.degenerate = true;
    } else {
      const double cosine = cs.co_unsafe / (norm_p * norm_u);
      cs.relative = 0.5 * (cosine + 1.0);
    }
    per_component.emplace(component, cs);
  }
  return finish(std::move(per_component), threshold);
}

ScoreBreakdown cosine_baseline_score(const ModelWeights& weights, const ModelConfig& cfg,
                                     const std::string& prompt, const ReferenceSet& refs,
                                     const ClassifierConfig& config) {
  check_reference_compatibility(weights, cfg, refs, config);
  const ComponentRegistry registry =
      ComponentRegistry::build(cfg, refs.provenance.granularity);
  const GradientMap raw =
      param_gradients(weights, cfg, prompt, refs.provenance.compliance, registry);
  return cosine_score_gradient_map(raw, refs, config.threshold);
}

}  // namespace gradcoo
