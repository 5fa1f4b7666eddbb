#include "gradcoo/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gradcoo/rng.hpp"
#include "json.hpp"

namespace gradcoo {

std::vector<int> tokenize(const std::string& text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<int>(c));
  return ids;
}

std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id > 255) {
      throw TokenRangeError("token id " + std::to_string(id) + " out of range [0, 256)");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0) {
    throw ContractError("model config has a zero dimension");
  }
  if (d_model % n_heads != 0) {
    throw ContractError("d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (max_seq_len < 8) {
    throw ContractError("max_seq_len must be at least 8, got " + std::to_string(max_seq_len));
  }
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.vocab_size == b.vocab_size && a.d_model == b.d_model &&
         a.n_layers == b.n_layers && a.n_heads == b.n_heads && a.d_ff == b.d_ff &&
         a.max_seq_len == b.max_seq_len && a.seed == b.seed;
}

std::map<std::string, std::vector<std::size_t>> expected_parameter_shapes(
    const ModelConfig& cfg) {
  cfg.validate();
  std::map<std::string, std::vector<std::size_t>> shapes;
  shapes["embed.tok"] = {cfg.vocab_size, cfg.d_model};
  shapes["embed.pos"] = {cfg.max_seq_len, cfg.d_model};
  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string p = "layer." + std::to_string(i) + ".";
    shapes[p + "attn.ln.gain"] = {cfg.d_model};
    shapes[p + "attn.ln.bias"] = {cfg.d_model};
    shapes[p + "attn.wq"] = {cfg.d_model, cfg.d_model};
    shapes[p + "attn.wk"] = {cfg.d_model, cfg.d_model};
    shapes[p + "attn.wv"] = {cfg.d_model, cfg.d_model};
    shapes[p + "attn.wo"] = {cfg.d_model, cfg.d_model};
    shapes[p + "mlp.ln.gain"] = {cfg.d_model};
    shapes[p + "mlp.ln.bias"] = {cfg.d_model};
    shapes[p + "mlp.w1"] = {cfg.d_model, cfg.d_ff};
    shapes[p + "mlp.b1"] = {cfg.d_ff};
    shapes[p + "mlp.w2"] = {cfg.d_ff, cfg.d_model};
    shapes[p + "mlp.b2"] = {cfg.d_model};
  }
  shapes["final_ln.gain"] = {cfg.d_model};
  shapes["final_ln.bias"] = {cfg.d_model};
  shapes["unembed"] = {cfg.d_model, cfg.vocab_size};
  return shapes;
}

std::size_t total_parameter_count(const ModelConfig& cfg) {
  std::size_t total = 0;
  for (const auto& [name, shape] : expected_parameter_shapes(cfg)) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    total += n;
  }
  return total;
}

ModelWeights init_weights(const ModelConfig& cfg) {
  constexpr double kInitStd = 0.02;
  Rng rng(cfg.seed);
  ModelWeights w;
  for (const auto& [name, shape] : expected_parameter_shapes(cfg)) {
    Tensor t = Tensor::zeros(shape);
    const bool is_gain = name.size() >= 4 && name.compare(name.size() - 4, 4, "gain") == 0;
    if (shape.size() == 2) {
      for (double& v : t.values) v = kInitStd * rng.next_gaussian();
    } else if (is_gain) {
      std::fill(t.values.begin(), t.values.end(), 1.0);
    }
    // biases stay zero
    w.params.emplace(name, std::move(t));
  }
  return w;
}

// ---------------------------------------------------------------------------
// Component registry
// ---------------------------------------------------------------------------

std::string to_string(Granularity g) {
  switch (g) {
    case Granularity::Matrix: return "matrix";
    case Granularity::Layer: return "layer";
    case Granularity::Head: return "head";
  }
  return "matrix";
}

Granularity granularity_from_string(const std::string& s) {
  if (s == "matrix") return Granularity::Matrix;
  if (s == "layer") return Granularity::Layer;
  if (s == "head") return Granularity::Head;
  throw ContractError("unknown granularity '" + s + "' (expected matrix|layer|head)");
}

namespace {

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.size() >= prefix.size() && s.compare(0, prefix.size(), prefix) == 0;
}

bool is_head_sliced(const std::string& name) {
  // attention projections are split along the head dimension
  return name.find(".attn.wq") != std::string::npos ||
         name.find(".attn.wk") != std::string::npos ||
         name.find(".attn.wv") != std::string::npos ||
         name.find(".attn.wo") != std::string::npos;
}

}  // namespace

ComponentRegistry ComponentRegistry::build(const ModelConfig& cfg, Granularity g) {
  ComponentRegistry reg;
  reg.granularity_ = g;
  const auto shapes = expected_parameter_shapes(cfg);

  for (const auto& [name, shape] : shapes) {
    std::vector<Slice> slices;
    if (g == Granularity::Matrix) {
      slices.push_back({name, SliceKind::Whole, 0, 1});
    } else if (g == Granularity::Layer) {
      std::string component;
      if (starts_with(name, "embed.")) {
        component = "embed";
      } else if (starts_with(name, "layer.")) {
        const std::size_t dot = name.find('.', 6);
        component = name.substr(0, dot);
      } else {
        component = "output";
      }
      slices.push_back({component, SliceKind::Whole, 0, 1});
    } else {  // Head
      if (is_head_sliced(name)) {
        // wq/wk/wv produce head outputs along columns; wo consumes them
        // along rows.
        const bool by_rows = name.find(".attn.wo") != std::string::npos;
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
          slices.push_back({name + ".h" + std::to_string(h),
                            by_rows ? SliceKind::RowBlock : SliceKind::ColBlock, h,
                            cfg.n_heads});
        }
      } else {
        slices.push_back({name, SliceKind::Whole, 0, 1});
      }
    }
    reg.param_slices_.emplace_back(name, std::move(slices));

    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    reg.total_coordinates_ += n;
  }

  std::vector<std::string> ids;
  for (const auto& [name, slices] : reg.param_slices_) {
    for (const Slice& s : slices) ids.push_back(s.component);
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  reg.components_ = std::move(ids);
  return reg;
}

GradientMap ComponentRegistry::partition(const std::map<std::string, Tensor>& named) const {
  GradientMap out;
  for (const std::string& c : components_) out.emplace(c, std::vector<double>{});

  for (const auto& [name, slices] : param_slices_) {
    const auto it = named.find(name);
    if (it == named.end()) {
      throw ConsistencyError("gradient for parameter '" + name + "' is missing");
    }
    const Tensor& t = it->second;
    for (const Slice& s : slices) {
      std::vector<double>& dst = out.at(s.component);
      switch (s.kind) {
        case SliceKind::Whole:
          dst.insert(dst.end(), t.values.begin(), t.values.end());
          break;
        case SliceKind::ColBlock: {
          const std::size_t rows = t.shape[0], cols = t.shape[1];
          const std::size_t w = cols / s.n_blocks;
          const std::size_t start = s.block * w;
          for (std::size_t r = 0; r < rows; ++r) {
            const double* row = t.values.data() + r * cols + start;
            dst.insert(dst.end(), row, row + w);
          }
          break;
        }
        case SliceKind::RowBlock: {
          const std::size_t rows = t.shape[0], cols = t.shape[1];
          const std::size_t h = rows / s.n_blocks;
          const double* begin = t.values.data() + s.block * h * cols;
          dst.insert(dst.end(), begin, begin + h * cols);
          break;
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace {

Tensor causal_mask(std::size_t t) {
  Tensor m = Tensor::zeros({t, t});
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = i + 1; j < t; ++j) m.values[i * t + j] = -1e9;
  }
  return m;
}

// Decoder forward over already-linked parameters.
Tensor build_logits(Graph& g, const std::map<std::string, Tensor>& p,
                    const ModelConfig& cfg, const std::vector<int>& ids) {
  if (ids.empty()) throw ContractError("forward pass needs at least one token");
  if (ids.size() > cfg.max_seq_len) {
    throw LengthError("sequence of " + std::to_string(ids.size()) +
                      " tokens exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  const std::size_t t = ids.size();
  std::vector<int> positions(t);
  for (std::size_t i = 0; i < t; ++i) positions[i] = static_cast<int>(i);

  Tensor x = g.add(g.embedding_lookup(p.at("embed.tok"), ids),
                   g.embedding_lookup(p.at("embed.pos"), positions));
  const Tensor mask = g.input(causal_mask(t));
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim()));

  for (std::size_t i = 0; i < cfg.n_layers; ++i) {
    const std::string lp = "layer." + std::to_string(i) + ".";
    const Tensor h = g.layer_norm(x, p.at(lp + "attn.ln.gain"), p.at(lp + "attn.ln.bias"));
    const Tensor q = g.matmul(h, p.at(lp + "attn.wq"));
    const Tensor k = g.matmul(h, p.at(lp + "attn.wk"));
    const Tensor v = g.matmul(h, p.at(lp + "attn.wv"));

    std::vector<Tensor> heads;
    heads.reserve(cfg.n_heads);
    for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
      const std::size_t start = hd * cfg.head_dim();
      const Tensor qh = g.slice_cols(q, start, cfg.head_dim());
      const Tensor kh = g.slice_cols(k, start, cfg.head_dim());
      const Tensor vh = g.slice_cols(v, start, cfg.head_dim());
      const Tensor scores = g.add(g.scale(g.matmul_nt(qh, kh), attn_scale), mask);
      heads.push_back(g.matmul(g.softmax_rows(scores), vh));
    }
    x = g.add(x, g.matmul(g.concat_cols(heads), p.at(lp + "attn.wo")));

    const Tensor h2 = g.layer_norm(x, p.at(lp + "mlp.ln.gain"), p.at(lp + "mlp.ln.bias"));
    const Tensor m1 = g.gelu(g.add(g.matmul(h2, p.at(lp + "mlp.w1")), p.at(lp + "mlp.b1")));
    const Tensor m2 = g.add(g.matmul(m1, p.at(lp + "mlp.w2")), p.at(lp + "mlp.b2"));
    x = g.add(x, m2);
  }

  x = g.layer_norm(x, p.at("final_ln.gain"), p.at("final_ln.bias"));
  return g.matmul(x, p.at("unembed"));
}

std::map<std::string, Tensor> link_weights(Graph& g, const ModelWeights& w) {
  std::map<std::string, Tensor> linked;
  for (const auto& [name, t] : w.params) linked.emplace(name, g.parameter(t));
  return linked;
}

// Next-token loss of `target` conditioned on `prefix`; positions inside the
// prefix are masked out. The final target token is only ever a label, so the
// model never sees past the target span.
Tensor span_loss_in_graph(Graph& g, const std::map<std::string, Tensor>& p,
                          const ModelConfig& cfg, const std::vector<int>& prefix,
                          const std::vector<int>& target) {
  if (target.empty()) throw EmptyLossError("target span is empty");
  std::vector<int> full = prefix;
  full.insert(full.end(), target.begin(), target.end());
  if (full.size() < 2) {
    throw EmptyLossError("sequence too short to predict any target token");
  }
  if (full.size() - 1 > cfg.max_seq_len) {
    throw LengthError("prompt plus target spans " + std::to_string(full.size() - 1) +
                      " input tokens, exceeding max_seq_len " +
                      std::to_string(cfg.max_seq_len));
  }

  const std::size_t n_in = full.size() - 1;
  std::vector<int> inputs(full.begin(), full.begin() + static_cast<std::ptrdiff_t>(n_in));
  std::vector<int> targets(n_in), mask(n_in, 0);
  for (std::size_t i = 0; i < n_in; ++i) {
    targets[i] = full[i + 1];
    if (i + 1 >= prefix.size()) mask[i] = 1;  // position i predicts token i+1
  }
  const Tensor logits = build_logits(g, p, cfg, inputs);
  return g.cross_entropy(logits, targets, mask);
}

LossGraph masked_span_loss(const ModelWeights& weights, const ModelConfig& cfg,
                           const std::vector<int>& prefix, const std::vector<int>& target) {
  LossGraph lg;
  lg.graph = std::make_unique<Graph>();
  lg.params = link_weights(*lg.graph, weights);
  lg.loss = span_loss_in_graph(*lg.graph, lg.params, cfg, prefix, target);
  return lg;
}

}  // namespace

Tensor forward_logits(const ModelWeights& weights, const ModelConfig& cfg,
                      const std::vector<int>& ids) {
  Graph g;
  const auto linked = link_weights(g, weights);
  Tensor logits = build_logits(g, linked, cfg, ids);
  logits.graph = nullptr;
  logits.node.reset();
  return logits;
}

std::map<std::string, Tensor> named_gradients(const LossGraph& lg) {
  auto by_node = lg.graph->backward(lg.loss);
  std::map<std::string, Tensor> out;
  for (const auto& [name, linked] : lg.params) {
    out.emplace(name, std::move(by_node.at(*linked.node)));
  }
  return out;
}

LossGraph compliance_loss(const ModelWeights& weights, const ModelConfig& cfg,
                          const std::string& prompt, const std::string& compliance) {
  if (compliance.empty()) throw EmptyLossError("compliance string is empty");
  return masked_span_loss(weights, cfg, tokenize(prompt), tokenize(compliance));
}

Tensor compliance_loss_in_graph(Graph& g, const std::map<std::string, Tensor>& linked,
                                const ModelConfig& cfg, const std::string& prompt,
                                const std::string& compliance) {
  if (compliance.empty()) throw EmptyLossError("compliance string is empty");
  return span_loss_in_graph(g, linked, cfg, tokenize(prompt), tokenize(compliance));
}

GradientMap param_gradients(const ModelWeights& weights, const ModelConfig& cfg,
                            const std::string& prompt, const std::string& compliance,
                            const ComponentRegistry& registry) {
  const LossGraph lg = compliance_loss(weights, cfg, prompt, compliance);
  return registry.partition(named_gradients(lg));
}

// ---------------------------------------------------------------------------
// Toy training
// ---------------------------------------------------------------------------

Corpus load_corpus_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open corpus file " + path.string());
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("prompt") ||
        !j.contains("response") || !j["prompt"].is_string() || !j["response"].is_string()) {
      throw ParseError("corpus line " + std::to_string(lineno) +
                       ": expected {\"prompt\": string, \"response\": string}");
    }
    corpus.emplace_back(j["prompt"].get<std::string>(), j["response"].get<std::string>());
  }
  return corpus;
}

namespace {

double corpus_mean_loss(const ModelWeights& w, const ModelConfig& cfg, const Corpus& corpus) {
  double total = 0.0;
  for (const auto& [prompt, response] : corpus) {
    total += masked_span_loss(w, cfg, tokenize(prompt), tokenize(response)).value();
  }
  return total / static_cast<double>(corpus.size());
}

}  // namespace

TrainResult train_toy(const ModelConfig& cfg, const Corpus& corpus, std::size_t steps,
                      double lr, std::size_t batch_size) {
  cfg.validate();
  if (steps < 1) throw ContractError("train_toy needs at least one step");
  if (corpus.empty()) throw ContractError("train_toy needs a non-empty corpus");
  if (batch_size == 0) throw ContractError("train_toy needs a positive batch size");

  TrainResult result;
  result.weights = init_weights(cfg);
  result.initial_loss = corpus_mean_loss(result.weights, cfg, corpus);

  const std::size_t n = corpus.size();
  const std::size_t b = std::min(batch_size, n);
  for (std::size_t step = 0; step < steps; ++step) {
    LossGraph lg;
    lg.graph = std::make_unique<Graph>();
    lg.params = link_weights(*lg.graph, result.weights);

    Tensor batch_loss;
    for (std::size_t j = 0; j < b; ++j) {
      const auto& [prompt, response] = corpus[(step * b + j) % n];
      const Tensor loss = span_loss_in_graph(*lg.graph, lg.params, cfg, tokenize(prompt),
                                             tokenize(response));
      batch_loss = j == 0 ? loss : lg.graph->add(batch_loss, loss);
    }
    lg.loss = lg.graph->scale(batch_loss, 1.0 / static_cast<double>(b));

    if (!std::isfinite(lg.value())) {
      throw TrainingError("training diverged at step " + std::to_string(step));
    }

    const auto grads = named_gradients(lg);
    for (auto& [name, tensor] : result.weights.params) {
      const std::vector<double>& gv = grads.at(name).values;
      for (std::size_t i = 0; i < tensor.values.size(); ++i) {
        tensor.values[i] -= lr * gv[i];
      }
    }
  }

  result.final_loss = corpus_mean_loss(result.weights, cfg, corpus);
  if (!std::isfinite(result.final_loss)) {
    throw TrainingError("training diverged at step " + std::to_string(steps));
  }
  if (result.final_loss >= result.initial_loss) {
    throw TrainingError("training made no progress: loss " +
                        std::to_string(result.initial_loss) + " -> " +
                        std::to_string(result.final_loss));
  }
  return result;
}

}  // namespace gradcoo
