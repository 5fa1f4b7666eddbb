#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gradcoo/errors.hpp"

namespace gradcoo {

class Graph;
using NodeId = std::uint32_t;

// Dense row-major tensor of 64-bit floats. A Tensor is a plain value unless
// it was produced by a Graph operation, in which case `node` identifies its
// position in that graph's tape.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  const Graph* graph = nullptr;
  std::optional<NodeId> node;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_in, std::vector<double> values_in);

  static Tensor zeros(std::vector<std::size_t> shape_in);
  static Tensor scalar(double v);
  static Tensor row(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  std::size_t numel() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  bool all_finite() const;
  std::string shape_str() const;  // e.g. "3x4"
};

// Reverse-mode tape. Nodes are appended in construction order, which is a
// topological order by construction; backward() walks the tape once in
// reverse with a fixed accumulation order, so gradients are bit-reproducible.
//
// A Graph is single-owner: build the forward pass, call backward, discard.
// Tensors returned by graph ops keep a pointer to the graph and must not
// outlive it.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf holding constant data; no gradient is tracked.
  Tensor input(Tensor t);
  // Leaf marked trainable; backward() reports its gradient.
  Tensor parameter(Tensor t);

  // C[m x n] = A[m x k] * B[k x n]
  Tensor matmul(const Tensor& a, const Tensor& b);
  // C[m x n] = A[m x k] * B[n x k]^T
  Tensor matmul_nt(const Tensor& a, const Tensor& b);

  // Elementwise sum. `b` may also be a length-n row vector added to every
  // row of an m x n matrix (bias broadcast); no other broadcasting exists.
  Tensor add(const Tensor& a, const Tensor& b);
  // Elementwise product, equal shapes only.
  Tensor mul(const Tensor& a, const Tensor& b);
  // Multiplication by a compile-time-known scalar.
  Tensor scale(const Tensor& a, double c);

  // Tanh-approximation GELU, applied pointwise.
  Tensor gelu(const Tensor& a);

  // Row-wise softmax with per-row max subtraction.
  Tensor softmax_rows(const Tensor& a);

  // Per-row standardization (epsilon 1e-5 inside the variance) followed by
  // the affine map gain * x + bias. Requires n >= 2.
  Tensor layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias);

  // Row gather from a [V x d] table; backward scatter-adds into the table.
  Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

  // Mean over mask-selected positions of -log softmax(logits[t])[targets[t]].
  Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                       const std::vector<int>& mask);

  // Sum of all entries, as a scalar node.
  Tensor sum(const Tensor& a);

  // Columns [start, start+width) of a matrix.
  Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t width);
  // Horizontal concatenation of matrices with equal row counts.
  Tensor concat_cols(const std::vector<Tensor>& parts);

  // Gradients of a scalar loss with respect to every parameter leaf,
  // keyed by node id. Only nodes reachable from the loss participate.
  std::map<NodeId, Tensor> backward(const Tensor& loss) const;

  std::size_t node_count() const { return nodes_.size(); }
  const std::vector<NodeId>& parameter_ids() const { return parameter_ids_; }

 private:
  enum class Op : std::uint8_t {
    Input,
    Parameter,
    MatMul,
    MatMulNT,
    Add,
    AddBias,
    Mul,
    Scale,
    Gelu,
    SoftmaxRows,
    LayerNorm,
    Embedding,
    CrossEntropy,
    Sum,
    SliceCols,
    ConcatCols,
  };

  struct Node {
    Op op = Op::Input;
    std::vector<NodeId> inputs;
    std::vector<std::size_t> shape;
    std::vector<double> values;
    std::vector<int> ints;     // token ids / targets+mask / slice bounds
    std::vector<double> aux;   // op-specific saved activations
    double scalar = 0.0;       // scale factor / masked-position count
  };

  NodeId push(Node n);
  Tensor handle(NodeId id) const;
  NodeId resolve(const Tensor& t);  // link check; wraps plain values as inputs
  const Node& node_at(NodeId id) const { return nodes_[id]; }

  std::vector<Node> nodes_;
  std::vector<NodeId> parameter_ids_;
};

// Report from a finite-difference comparison of analytic gradients.
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t samples = 0;
  bool pass = false;
};

// Builds a scalar loss over the linked parameters handed to it.
using LossBuilder =
    std::function<Tensor(Graph&, const std::map<std::string, Tensor>&)>;

// Compares analytic gradients of `build` against central finite differences
// on `samples` randomly chosen parameter coordinates. Relative error uses the
// denominator max(|analytic|, |numeric|, 1e-8); pass iff max <= tol.
GradCheckReport grad_check(const LossBuilder& build,
                           const std::map<std::string, Tensor>& params,
                           std::size_t samples, double h, double tol,
                           std::uint64_t seed = 0);

}  // namespace gradcoo
