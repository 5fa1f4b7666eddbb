#pragma once

#include <map>
#include <string>
#include <vector>

#include "gradcoo/model.hpp"
#include "gradcoo/references.hpp"

namespace gradcoo {

// Inner product with a fixed summation order.
double co_occurrence(const std::vector<double>& a, const std::vector<double>& b);

// s_u / (s_u + s_s), with 0.5 for near-zero denominators. Computed so that
// swapping the arguments yields the exact floating-point complement: the
// dominant side is divided once and the other side returned as 1 minus that
// quotient, which is exact for quotients in [1/2, 1] (Sterbenz).
double relative_unsafe(double s_u, double s_s, double epsilon = 1e-12);

// Arithmetic mean of component scores, computed as an offset from 1/2 and
// snapped to a 2^-53 grid. Negating every offset negates the mean bitwise,
// so a reference swap complements the aggregate exactly; the snap changes
// the plain mean by at most one part in 2^53.
double aggregate_scores(const std::vector<double>& component_scores);

enum class Decision { Safe, Unsafe };

inline const char* to_string(Decision d) { return d == Decision::Unsafe ? "unsafe" : "safe"; }

struct ComponentScore {
  double co_unsafe = 0.0;   // co-occurrence with the unsafe reference
  double co_safe = 0.0;     // co-occurrence with the safe reference
  double relative = 0.0;    // this component's vote
  bool degenerate = false;  // tie rule fired
};

struct ScoreBreakdown {
  std::map<std::string, ComponentScore> per_component;
  double aggregate = 0.0;
  double threshold = 0.0;
  Decision decision = Decision::Safe;
};

struct ClassifierConfig {
  double threshold = 0.5;
  Granularity granularity = Granularity::Matrix;
  ProcessingOptions options;
  std::string compliance = "Sure";
};

// Scores an already-computed raw gradient map against the references: each
// component is processed with the reference set's own options, dotted against
// both classes, and the relative scores averaged. Strict comparison
// aggregate > threshold decides "unsafe".
ScoreBreakdown score_gradient_map(const GradientMap& raw, const ReferenceSet& refs,
                                  double threshold);

// Full path: compliance-loss gradients for the prompt (computed with the
// reference set's compliance text and granularity), then score_gradient_map.
// Rejects references built against a different model.
ScoreBreakdown score_prompt(const ModelWeights& weights, const ModelConfig& cfg,
                            const std::string& prompt, const ReferenceSet& refs,
                            const ClassifierConfig& config);

// Throws ReferenceIncompatibilityError unless the references were built
// against exactly this model and the configured granularity.
void check_reference_compatibility(const ModelWeights& weights, const ModelConfig& cfg,
                                   const ReferenceSet& refs,
                                   const ClassifierConfig& config);

// Directional-similarity baseline: per component the cosine between the raw
// prompt gradient and the raw unsafe reference, mapped to [0, 1] via
// (c + 1) / 2. Requires references built with both processing flags off.
ScoreBreakdown cosine_score_gradient_map(const GradientMap& raw, const ReferenceSet& refs,
                                         double threshold);

ScoreBreakdown cosine_baseline_score(const ModelWeights& weights, const ModelConfig& cfg,
                                     const std::string& prompt, const ReferenceSet& refs,
                                     const ClassifierConfig& config);

}  // namespace gradcoo
