#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gradcoo/tensor.hpp"

namespace gradcoo {

// Byte-level tokenizer: one token per byte, vocabulary 0..255.
std::vector<int> tokenize(const std::string& text);
std::string detokenize(const std::vector<int>& ids);

struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t max_seq_len = 128;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }
  // Throws ContractError when the configuration is internally inconsistent.
  void validate() const;
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

// Named parameters of the decoder. Immutable once training finished; shared
// read-only across scoring workers.
struct ModelWeights {
  std::map<std::string, Tensor> params;
};

// The exact parameter name -> shape set a config implies.
std::map<std::string, std::vector<std::size_t>> expected_parameter_shapes(
    const ModelConfig& cfg);

// Fresh weights: matrices drawn from N(0, 0.02), layer-norm gains 1, biases 0.
// Fully determined by cfg.seed.
ModelWeights init_weights(const ModelConfig& cfg);

std::size_t total_parameter_count(const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Component registry
// ---------------------------------------------------------------------------

enum class Granularity { Matrix, Layer, Head };

std::string to_string(Granularity g);
Granularity granularity_from_string(const std::string& s);

// Per-component flat gradient vectors for one prompt.
using GradientMap = std::map<std::string, std::vector<double>>;

// Assigns every parameter coordinate to exactly one named component.
//   Matrix: one component per named parameter tensor.
//   Layer:  embeddings / each decoder layer / the output head.
//   Head:   like Matrix, but attention projections split per attention head.
class ComponentRegistry {
 public:
  static ComponentRegistry build(const ModelConfig& cfg, Granularity g);

  Granularity granularity() const { return granularity_; }
  const std::vector<std::string>& components() const { return components_; }
  std::size_t total_coordinates() const { return total_coordinates_; }

  // Splits named parameter-shaped tensors (gradients) into per-component
  // flat vectors. Coordinate order is fixed: parameters in name order, slices
  // in head order, entries row-major.
  GradientMap partition(const std::map<std::string, Tensor>& named) const;

 private:
  enum class SliceKind { Whole, ColBlock, RowBlock };
  struct Slice {
    std::string component;
    SliceKind kind = SliceKind::Whole;
    std::size_t block = 0;
    std::size_t n_blocks = 1;
  };

  Granularity granularity_ = Granularity::Matrix;
  std::vector<std::pair<std::string, std::vector<Slice>>> param_slices_;
  std::vector<std::string> components_;
  std::size_t total_coordinates_ = 0;
};

// ---------------------------------------------------------------------------
// Forward pass and losses
// ---------------------------------------------------------------------------

// Logits for a token sequence; plain values, no graph attached to the result.
Tensor forward_logits(const ModelWeights& weights, const ModelConfig& cfg,
                      const std::vector<int>& ids);

// A scalar loss together with the graph that produced it, so gradients can be
// pulled per parameter name.
struct LossGraph {
  std::unique_ptr<Graph> graph;
  std::map<std::string, Tensor> params;  // parameter tensors linked into *graph
  Tensor loss;

  double value() const { return loss.values[0]; }
};

// Gradient tensors keyed by parameter name.
std::map<std::string, Tensor> named_gradients(const LossGraph& lg);

// Cross entropy of the compliance tokens conditioned on the prompt prefix.
// Prompt positions are masked out of the loss; nothing after the compliance
// span is ever fed to the model.
LossGraph compliance_loss(const ModelWeights& weights, const ModelConfig& cfg,
                          const std::string& prompt, const std::string& compliance);

// Same loss built inside a caller-owned graph over already-linked parameters,
// so harnesses like grad_check can drive the full model.
Tensor compliance_loss_in_graph(Graph& g, const std::map<std::string, Tensor>& linked,
                                const ModelConfig& cfg, const std::string& prompt,
                                const std::string& compliance);

// Compliance-loss gradients flattened and partitioned per component.
GradientMap param_gradients(const ModelWeights& weights, const ModelConfig& cfg,
                            const std::string& prompt, const std::string& compliance,
                            const ComponentRegistry& registry);

// ---------------------------------------------------------------------------
// Toy training
// ---------------------------------------------------------------------------

using Corpus = std::vector<std::pair<std::string, std::string>>;  // prompt, response

// JSONL with fields {"prompt": string, "response": string}.
Corpus load_corpus_jsonl(const std::filesystem::path& path);

struct TrainResult {
  ModelWeights weights;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// Plain minibatch gradient descent on the next-token loss over responses.
// Deterministic given cfg.seed; fails with TrainingError on divergence or if
// the final corpus loss does not improve on the initial one.
TrainResult train_toy(const ModelConfig& cfg, const Corpus& corpus, std::size_t steps,
                      double lr, std::size_t batch_size = 8);

}  // namespace gradcoo
