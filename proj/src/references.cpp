#include "gradcoo/references.hpp"

#include <cmath>
#include <fstream>

#include "gradcoo/errors.hpp"
#include "json.hpp"

namespace gradcoo {

bool operator==(const ProcessingOptions& a, const ProcessingOptions& b) {
  return a.apply_norm == b.apply_norm && a.apply_abs == b.apply_abs &&
         a.degenerate_epsilon == b.degenerate_epsilon;
}

ProcessedVector process_component(const std::vector<double>& raw,
                                  const ProcessingOptions& options) {
  if (raw.empty()) throw DimensionError("process_component: empty vector");
  ProcessedVector out;
  out.values = raw;
  if (options.apply_norm) {
    double sum_sq = 0.0;
    for (double v : out.values) sum_sq += v * v;
    const double deviation = std::sqrt(sum_sq / static_cast<double>(out.values.size()));
    if (deviation < options.degenerate_epsilon) {
      std::fill(out.values.begin(), out.values.end(), 0.0);
      out.degenerate = true;
      return out;
    }
    for (double& v : out.values) v /= deviation;
  }
  if (options.apply_abs) {
    for (double& v : out.values) v = std::fabs(v);
  }
  return out;
}

GradientMap average_gradient_maps(const std::vector<GradientMap>& maps) {
  if (maps.empty()) throw ContractError("average_gradient_maps: no maps given");
  GradientMap mean = maps[0];
  for (std::size_t i = 1; i < maps.size(); ++i) {
    if (maps[i].size() != mean.size()) {
      throw ConsistencyError("gradient maps disagree on component count");
    }
    for (auto& [component, acc] : mean) {
      const auto it = maps[i].find(component);
      if (it == maps[i].end() || it->second.size() != acc.size()) {
        throw ConsistencyError("gradient maps disagree on component '" + component + "'");
      }
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += it->second[j];
    }
  }
  const double inv = 1.0 / static_cast<double>(maps.size());
  for (auto& [component, acc] : mean) {
    for (double& v : acc) v *= inv;
  }
  return mean;
}

ReferenceSet build_references(const ModelWeights& weights, const ModelConfig& cfg,
                              const std::vector<std::string>& safe_prompts,
                              const std::vector<std::string>& unsafe_prompts,
                              const std::string& compliance,
                              const ComponentRegistry& registry,
                              const ProcessingOptions& options) {
  if (safe_prompts.empty() || unsafe_prompts.empty()) {
    throw ContractError("build_references needs at least one prompt per class");
  }

  auto class_reference = [&](const std::vector<std::string>& prompts) {
    std::vector<GradientMap> maps;
    maps.reserve(prompts.size());
    for (const std::string& p : prompts) {
      maps.push_back(param_gradients(weights, cfg, p, compliance, registry));
    }
    GradientMap mean = average_gradient_maps(maps);
    std::map<std::string, std::vector<double>> processed;
    for (auto& [component, vec] : mean) {
      processed.emplace(component, process_component(vec, options).values);
    }
    return processed;
  };

  ReferenceSet refs;
  refs.safe = class_reference(safe_prompts);
  refs.unsafe = class_reference(unsafe_prompts);
  refs.options = options;
  refs.provenance.safe_prompts = safe_prompts;
  refs.provenance.unsafe_prompts = unsafe_prompts;
  refs.provenance.compliance = compliance;
  refs.provenance.model_digest = weights_digest(weights, cfg);
  refs.provenance.granularity = registry.granularity();
  return refs;
}

namespace {

constexpr const char* kReferenceKind = "gradcoo_reference_set";

Container references_container(const ReferenceSet& refs) {
  nlohmann::json header;
  header["kind"] = kReferenceKind;
  header["options"] = {{"apply_norm", refs.options.apply_norm},
                       {"apply_abs", refs.options.apply_abs},
                       {"degenerate_epsilon", refs.options.degenerate_epsilon}};
  header["compliance"] = refs.provenance.compliance;
  header["safe_prompts"] = refs.provenance.safe_prompts;
  header["unsafe_prompts"] = refs.provenance.unsafe_prompts;
  header["model_digest"] = refs.provenance.model_digest;
  header["granularity"] = to_string(refs.provenance.granularity);

  Container c;
  c.header = header.dump();
  for (const auto& [component, vec] : refs.safe) {
    c.tensors.emplace_back("safe/" + component, Tensor::row(vec));
  }
  for (const auto& [component, vec] : refs.unsafe) {
    c.tensors.emplace_back("unsafe/" + component, Tensor::row(vec));
  }
  return c;
}

}  // namespace

void save_references(const std::filesystem::path& path, const ReferenceSet& refs) {
  write_container(path, references_container(refs));
}

ReferenceSet load_references(const std::filesystem::path& path) {
  const Container c = read_container(path);
  const nlohmann::json header = nlohmann::json::parse(c.header, nullptr, false);
  if (header.is_discarded() || !header.is_object() ||
      header.value("kind", "") != kReferenceKind) {
    throw FormatError(path.string() + " is not a reference-set file");
  }

  ReferenceSet refs;
  try {
    refs.options.apply_norm = header.at("options").at("apply_norm").get<bool>();
    refs.options.apply_abs = header.at("options").at("apply_abs").get<bool>();
    refs.options.degenerate_epsilon =
        header.at("options").at("degenerate_epsilon").get<double>();
    refs.provenance.compliance = header.at("compliance").get<std::string>();
    refs.provenance.safe_prompts =
        header.at("safe_prompts").get<std::vector<std::string>>();
    refs.provenance.unsafe_prompts =
        header.at("unsafe_prompts").get<std::vector<std::string>>();
    refs.provenance.model_digest = header.at("model_digest").get<std::string>();
    refs.provenance.granularity =
        granularity_from_string(header.at("granularity").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("reference-set header is incomplete: " + std::string(e.what()));
  }

  for (const auto& [name, tensor] : c.tensors) {
    if (name.rfind("safe/", 0) == 0) {
      refs.safe.emplace(name.substr(5), tensor.values);
    } else if (name.rfind("unsafe/", 0) == 0) {
      refs.unsafe.emplace(name.substr(7), tensor.values);
    } else {
      throw FormatError("unexpected tensor '" + name + "' in reference-set file");
    }
  }

  if (refs.safe.size() != refs.unsafe.size()) {
    throw ConsistencyError("reference set has mismatched safe/unsafe component sets");
  }
  for (const auto& [component, vec] : refs.safe) {
    const auto it = refs.unsafe.find(component);
    if (it == refs.unsafe.end() || it->second.size() != vec.size()) {
      throw ConsistencyError("reference component '" + component +
                             "' differs between the safe and unsafe classes");
    }
  }
  return refs;
}

std::string references_digest(const ReferenceSet& refs) {
  return fnv1a_hex(serialize_container(references_container(refs)));
}

ReferencePrompts load_reference_prompts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open reference prompts file " + path.string());
  ReferencePrompts out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("prompt") ||
        !j["prompt"].is_string() || !j.contains("class") || !j["class"].is_string()) {
      throw ParseError("reference prompts line " + std::to_string(lineno) +
                       ": expected {\"prompt\": string, \"class\": \"safe\"|\"unsafe\"}");
    }
    const std::string cls = j["class"].get<std::string>();
    if (cls == "safe") {
      out.safe.push_back(j["prompt"].get<std::string>());
    } else if (cls == "unsafe") {
      out.unsafe.push_back(j["prompt"].get<std::string>());
    } else {
      throw LabelError("reference prompts line " + std::to_string(lineno) +
                       ": unknown class '" + cls + "'");
    }
  }
  return out;
}

}  // namespace gradcoo
