#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "gradcoo/checkpoint.hpp"
#include "gradcoo/model.hpp"

namespace gradcoo {

// Debiasing applied to every per-component gradient vector. Defaults are the
// full pipeline; ablations flip the flags.
struct ProcessingOptions {
  bool apply_norm = true;  // divide by the vector's deviation (magnitude bias)
  bool apply_abs = true;   // drop coordinate signs (directional bias)
  double degenerate_epsilon = 1e-12;
};

bool operator==(const ProcessingOptions& a, const ProcessingOptions& b);

struct ProcessedVector {
  std::vector<double> values;
  bool degenerate = false;
};

// Normalization then absolute value, in that order. The deviation is taken
// about zero rather than about the mean, which makes the transform exactly
// invariant under per-coordinate sign flips; a vector whose deviation falls
// below degenerate_epsilon comes back as zeros with the degenerate flag set.
ProcessedVector process_component(const std::vector<double>& raw,
                                  const ProcessingOptions& options);

// Elementwise mean of per-component gradient maps (identical key sets).
GradientMap average_gradient_maps(const std::vector<GradientMap>& maps);

struct ReferenceProvenance {
  std::vector<std::string> safe_prompts;
  std::vector<std::string> unsafe_prompts;
  std::string compliance;
  std::string model_digest;
  Granularity granularity = Granularity::Matrix;
};

// Processed per-component reference vectors for the safe and unsafe classes.
// Immutable once built; shareable across scoring workers.
struct ReferenceSet {
  std::map<std::string, std::vector<double>> safe;
  std::map<std::string, std::vector<double>> unsafe;
  ProcessingOptions options;
  ReferenceProvenance provenance;
};

// Per class: gradients per reference prompt, raw elementwise average across
// prompts, then process_component. Provenance records exactly what was used.
ReferenceSet build_references(const ModelWeights& weights, const ModelConfig& cfg,
                              const std::vector<std::string>& safe_prompts,
                              const std::vector<std::string>& unsafe_prompts,
                              const std::string& compliance,
                              const ComponentRegistry& registry,
                              const ProcessingOptions& options);

// Same named-tensor container as checkpoints, with a provenance header.
void save_references(const std::filesystem::path& path, const ReferenceSet& refs);
ReferenceSet load_references(const std::filesystem::path& path);
std::string references_digest(const ReferenceSet& refs);

// Reference prompt files: JSONL {"prompt": string, "class": "safe"|"unsafe"}.
struct ReferencePrompts {
  std::vector<std::string> safe;
  std::vector<std::string> unsafe;
};

ReferencePrompts load_reference_prompts(const std::filesystem::path& path);

}  // namespace gradcoo
