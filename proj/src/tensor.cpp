#include "gradcoo/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gradcoo/rng.hpp"

namespace gradcoo {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

constexpr double kGeluCoeff = 0.044715;
const double kGeluScale = std::sqrt(2.0 / 3.14159265358979323846);

double gelu_forward(double x) {
  const double u = kGeluScale * (x + kGeluCoeff * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_derivative(double x) {
  const double u = kGeluScale * (x + kGeluCoeff * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluScale * (1.0 + 3.0 * kGeluCoeff * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

constexpr double kLayerNormEps = 1e-5;

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape_in, std::vector<double> values_in)
    : shape(std::move(shape_in)), values(std::move(values_in)) {
  if (shape_product(shape) != values.size()) {
    throw DimensionError("tensor shape " + shape_str() + " does not match " +
                         std::to_string(values.size()) + " values");
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape_in) {
  const std::size_t n = shape_product(shape_in);
  return Tensor(std::move(shape_in), std::vector<double>(n, 0.0));
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::row(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor({rows, cols}, std::move(v));
}

std::size_t Tensor::rows() const {
  if (shape.size() != 2) throw DimensionError("rows() on non-matrix tensor " + shape_str());
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (shape.size() != 2) throw DimensionError("cols() on non-matrix tensor " + shape_str());
  return shape[1];
}

double& Tensor::at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }

double Tensor::at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

bool Tensor::all_finite() const {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_str() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  if (shape.empty()) out << "scalar";
  return out.str();
}

// ---------------------------------------------------------------------------
// Graph construction
// ---------------------------------------------------------------------------

NodeId Graph::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

Tensor Graph::handle(NodeId id) const {
  Tensor t;
  t.shape = nodes_[id].shape;
  t.values = nodes_[id].values;
  t.graph = this;
  t.node = id;
  return t;
}

NodeId Graph::resolve(const Tensor& t) {
  if (t.node.has_value()) {
    if (t.graph != this) {
      throw ContractError("tensor belongs to a different graph");
    }
    return *t.node;
  }
  Node n;
  n.op = Op::Input;
  n.shape = t.shape;
  n.values = t.values;
  return push(std::move(n));
}

Tensor Graph::input(Tensor t) {
  Node n;
  n.op = Op::Input;
  n.shape = std::move(t.shape);
  n.values = std::move(t.values);
  return handle(push(std::move(n)));
}

Tensor Graph::parameter(Tensor t) {
  Node n;
  n.op = Op::Parameter;
  n.shape = std::move(t.shape);
  n.values = std::move(t.values);
  const NodeId id = push(std::move(n));
  parameter_ids_.push_back(id);
  return handle(id);
}

Tensor Graph::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
    throw DimensionError("matmul shape mismatch: " + a.shape_str() + " * " + b.shape_str());
  }
  const NodeId ia = resolve(a), ib = resolve(b);
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Node out;
  out.op = Op::MatMul;
  out.inputs = {ia, ib};
  out.shape = {m, n};
  out.values.assign(m * n, 0.0);
  const double* pa = nodes_[ia].values.data();
  const double* pb = nodes_[ib].values.data();
  double* pc = out.values.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      const double* brow = pb + kk * n;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aik * brow[j];
    }
  }
  return handle(push(std::move(out)));
}

Tensor Graph::matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1]) {
    throw DimensionError("matmul_nt shape mismatch: " + a.shape_str() + " * " +
                         b.shape_str() + "^T");
  }
  const NodeId ia = resolve(a), ib = resolve(b);
  const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[0];
  Node out;
  out.op = Op::MatMulNT;
  out.inputs = {ia, ib};
  out.shape = {m, n};
  out.values.assign(m * n, 0.0);
  const double* pa = nodes_[ia].values.data();
  const double* pb = nodes_[ib].values.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      out.values[i * n + j] = acc;
    }
  }
  return handle(push(std::move(out)));
}

Tensor Graph::add(const Tensor& a, const Tensor& b) {
  const bool same_shape = a.shape == b.shape;
  const bool bias_broadcast =
      a.rank() == 2 && b.rank() == 1 && b.shape[0] == a.shape[1];
  if (!same_shape && !bias_broadcast) {
    throw DimensionError("add shape mismatch: " + a.shape_str() + " + " + b.shape_str());
  }
  const NodeId ia = resolve(a), ib = resolve(b);
  Node out;
  out.op = same_shape ? Op::Add : Op::AddBias;
  out.inputs = {ia, ib};
  out.shape = a.shape;
  out.values = nodes_[ia].values;
  const std::vector<double>& bv = nodes_[ib].values;
  if (same_shape) {
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += bv[i];
  } else {
    const std::size_t n = b.shape[0];
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += bv[i % n];
  }
  return handle(push(std::move(out)));
}

Tensor Graph::mul(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) {
    throw DimensionError("mul shape mismatch: " + a.shape_str() + " * " + b.shape_str());
  }
  const NodeId ia = resolve(a), ib = resolve(b);
  Node out;
  out.op = Op::Mul;
  out.inputs = {ia, ib};
  out.shape = a.shape;
  out.values = nodes_[ia].values;
  const std::vector<double>& bv = nodes_[ib].values;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] *= bv[i];
  return handle(push(std::move(out)));
}

Tensor Graph::scale(const Tensor& a, double c) {
  const NodeId ia = resolve(a);
  Node out;
  out.op = Op::Scale;
  out.inputs = {ia};
  out.shape = a.shape;
  out.scalar = c;
  out.values = nodes_[ia].values;
  for (double& v : out.values) v *= c;
  return handle(push(std::move(out)));
}

Tensor Graph::gelu(const Tensor& a) {
  const NodeId ia = resolve(a);
  Node out;
  out.op = Op::Gelu;
  out.inputs = {ia};
  out.shape = a.shape;
  out.values = nodes_[ia].values;
  for (double& v : out.values) v = gelu_forward(v);
  return handle(push(std::move(out)));
}

Tensor Graph::softmax_rows(const Tensor& a) {
  if (a.rank() != 2) {
    throw DimensionError("softmax_rows expects a matrix, got " + a.shape_str());
  }
  const NodeId ia = resolve(a);
  const std::size_t m = a.shape[0], n = a.shape[1];
  Node out;
  out.op = Op::SoftmaxRows;
  out.inputs = {ia};
  out.shape = a.shape;
  out.values = nodes_[ia].values;
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.values.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - mx);
      denom += row[j];
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= denom;
  }
  return handle(push(std::move(out)));
}

Tensor Graph::layer_norm(const Tensor& a, const Tensor& gain, const Tensor& bias) {
  if (a.rank() != 2 || a.shape[1] < 2) {
    throw DimensionError("layer_norm expects a matrix with at least 2 columns, got " +
                         a.shape_str());
  }
  const std::size_t m = a.shape[0], n = a.shape[1];
  if (gain.rank() != 1 || gain.shape[0] != n || bias.rank() != 1 || bias.shape[0] != n) {
    throw DimensionError("layer_norm gain/bias must be length-" + std::to_string(n) +
                         " vectors, got " + gain.shape_str() + " and " + bias.shape_str());
  }
  const NodeId ia = resolve(a), ig = resolve(gain), ib = resolve(bias);
  Node out;
  out.op = Op::LayerNorm;
  out.inputs = {ia, ig, ib};
  out.shape = a.shape;
  out.values.assign(m * n, 0.0);
  out.aux.assign(m * n + m, 0.0);  // xhat rows, then per-row 1/std
  const double* px = nodes_[ia].values.data();
  const double* pg = nodes_[ig].values.data();
  const double* pb = nodes_[ib].values.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* xrow = px + i * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xrow[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = xrow[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    out.aux[m * n + i] = inv_std;
    for (std::size_t j = 0; j < n; ++j) {
      const double xhat = (xrow[j] - mean) * inv_std;
      out.aux[i * n + j] = xhat;
      out.values[i * n + j] = pg[j] * xhat + pb[j];
    }
  }
  return handle(push(std::move(out)));
}

Tensor Graph::embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2) {
    throw DimensionError("embedding_lookup expects a matrix table, got " + table.shape_str());
  }
  const std::size_t vocab = table.shape[0], dim = table.shape[1];
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw TokenRangeError("token id " + std::to_string(id) + " out of range [0, " +
                            std::to_string(vocab) + ")");
    }
  }
  const NodeId it = resolve(table);
  Node out;
  out.op = Op::Embedding;
  out.inputs = {it};
  out.shape = {ids.size(), dim};
  out.ints = ids;
  out.values.assign(ids.size() * dim, 0.0);
  const double* pt = nodes_[it].values.data();
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const double* src = pt + static_cast<std::size_t>(ids[t]) * dim;
    std::copy(src, src + dim, out.values.data() + t * dim);
  }
  return handle(push(std::move(out)));
}

Tensor Graph::cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<int>& mask) {
  if (logits.rank() != 2) {
    throw DimensionError("cross_entropy expects a matrix of logits, got " +
                         logits.shape_str());
  }
  const std::size_t tlen = logits.shape[0], vocab = logits.shape[1];
  if (targets.size() != tlen || mask.size() != tlen) {
    throw ContractError("cross_entropy needs " + std::to_string(tlen) +
                        " targets and mask entries, got " + std::to_string(targets.size()) +
                        " and " + std::to_string(mask.size()));
  }
  std::size_t active = 0;
  for (std::size_t t = 0; t < tlen; ++t) {
    if (mask[t] == 0) continue;
    ++active;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab) {
      throw TokenRangeError("target id " + std::to_string(targets[t]) +
                            " out of range [0, " + std::to_string(vocab) + ")");
    }
  }
  if (active == 0) throw EmptyLossError("cross_entropy mask selects no positions");

  const NodeId il = resolve(logits);
  Node out;
  out.op = Op::CrossEntropy;
  out.inputs = {il};
  out.shape = {1};
  out.ints.reserve(2 * tlen);
  out.ints.insert(out.ints.end(), targets.begin(), targets.end());
  out.ints.insert(out.ints.end(), mask.begin(), mask.end());
  out.scalar = static_cast<double>(active);
  out.aux.assign(tlen * vocab, 0.0);  // softmax probabilities, all rows

  const double* pl = nodes_[il].values.data();
  double loss = 0.0;
  for (std::size_t t = 0; t < tlen; ++t) {
    const double* row = pl + t * vocab;
    double mx = row[0];
    for (std::size_t j = 1; j < vocab; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      const double e = std::exp(row[j] - mx);
      out.aux[t * vocab + j] = e;
      denom += e;
    }
    for (std::size_t j = 0; j < vocab; ++j) out.aux[t * vocab + j] /= denom;
    if (mask[t] != 0) {
      const double logprob = (row[targets[t]] - mx) - std::log(denom);
      loss -= logprob;
    }
  }
  out.values = {loss / static_cast<double>(active)};
  return handle(push(std::move(out)));
}

Tensor Graph::sum(const Tensor& a) {
  const NodeId ia = resolve(a);
  Node out;
  out.op = Op::Sum;
  out.inputs = {ia};
  out.shape = {1};
  double acc = 0.0;
  for (double v : nodes_[ia].values) acc += v;
  out.values = {acc};
  return handle(push(std::move(out)));
}

Tensor Graph::slice_cols(const Tensor& a, std::size_t start, std::size_t width) {
  if (a.rank() != 2 || width == 0 || start + width > a.shape[1]) {
    throw DimensionError("slice_cols [" + std::to_string(start) + ", " +
                         std::to_string(start + width) + ") out of bounds for " +
                         a.shape_str());
  }
  const NodeId ia = resolve(a);
  const std::size_t m = a.shape[0], n = a.shape[1];
  Node out;
  out.op = Op::SliceCols;
  out.inputs = {ia};
  out.shape = {m, width};
  out.ints = {static_cast<int>(start), static_cast<int>(width)};
  out.values.assign(m * width, 0.0);
  const double* pa = nodes_[ia].values.data();
  for (std::size_t i = 0; i < m; ++i) {
    std::copy(pa + i * n + start, pa + i * n + start + width, out.values.data() + i * width);
  }
  return handle(push(std::move(out)));
}

Tensor Graph::concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols needs at least one part");
  const std::size_t m = parts[0].rank() == 2 ? parts[0].shape[0] : 0;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.shape[0] != m) {
      throw DimensionError("concat_cols parts must be matrices with equal row counts");
    }
    total += p.shape[1];
  }
  Node out;
  out.op = Op::ConcatCols;
  out.shape = {m, total};
  out.values.assign(m * total, 0.0);
  std::size_t col = 0;
  for (const Tensor& p : parts) {
    const NodeId id = resolve(p);
    out.inputs.push_back(id);
    const std::size_t w = p.shape[1];
    const double* src = nodes_[id].values.data();
    for (std::size_t i = 0; i < m; ++i) {
      std::copy(src + i * w, src + (i + 1) * w, out.values.data() + i * total + col);
    }
    col += w;
  }
  return handle(push(std::move(out)));
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

std::map<NodeId, Tensor> Graph::backward(const Tensor& loss) const {
  if (!loss.node.has_value() || loss.graph != this) {
    throw ContractError("backward: loss is not a node of this graph");
  }
  if (nodes_[*loss.node].values.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + loss.shape_str());
  }

  const NodeId loss_id = *loss.node;
  std::vector<std::vector<double>> grads(nodes_.size());
  grads[loss_id].assign(1, 1.0);

  auto grad_of = [&](NodeId id) -> std::vector<double>& {
    if (grads[id].empty()) grads[id].assign(nodes_[id].values.size(), 0.0);
    return grads[id];
  };

  for (NodeId id = loss_id + 1; id-- > 0;) {
    const Node& n = nodes_[id];
    if (grads[id].empty()) continue;  // not reachable from the loss
    const std::vector<double>& g = grads[id];
    switch (n.op) {
      case Op::Input:
      case Op::Parameter:
        break;
      case Op::MatMul: {
        const Node& a = nodes_[n.inputs[0]];
        const Node& b = nodes_[n.inputs[1]];
        const std::size_t m = a.shape[0], k = a.shape[1], nc = b.shape[1];
        std::vector<double>& da = grad_of(n.inputs[0]);
        std::vector<double>& db = grad_of(n.inputs[1]);
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * nc;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double* brow = b.values.data() + kk * nc;
            double acc = 0.0;
            for (std::size_t j = 0; j < nc; ++j) acc += grow[j] * brow[j];
            da[i * k + kk] += acc;
          }
        }
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * nc;
          for (std::size_t kk = 0; kk < k; ++kk) {
            const double aik = a.values[i * k + kk];
            double* dbrow = db.data() + kk * nc;
            for (std::size_t j = 0; j < nc; ++j) dbrow[j] += aik * grow[j];
          }
        }
        break;
      }
      case Op::MatMulNT: {
        const Node& a = nodes_[n.inputs[0]];
        const Node& b = nodes_[n.inputs[1]];
        const std::size_t m = a.shape[0], k = a.shape[1], nc = b.shape[0];
        std::vector<double>& da = grad_of(n.inputs[0]);
        std::vector<double>& db = grad_of(n.inputs[1]);
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * nc;
          double* darow = da.data() + i * k;
          for (std::size_t j = 0; j < nc; ++j) {
            const double gij = grow[j];
            const double* brow = b.values.data() + j * k;
            for (std::size_t kk = 0; kk < k; ++kk) darow[kk] += gij * brow[kk];
          }
        }
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * nc;
          const double* arow = a.values.data() + i * k;
          for (std::size_t j = 0; j < nc; ++j) {
            const double gij = grow[j];
            double* dbrow = db.data() + j * k;
            for (std::size_t kk = 0; kk < k; ++kk) dbrow[kk] += gij * arow[kk];
          }
        }
        break;
      }
      case Op::Add: {
        std::vector<double>& da = grad_of(n.inputs[0]);
        std::vector<double>& db = grad_of(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          da[i] += g[i];
          db[i] += g[i];
        }
        break;
      }
      case Op::AddBias: {
        std::vector<double>& da = grad_of(n.inputs[0]);
        std::vector<double>& db = grad_of(n.inputs[1]);
        const std::size_t nb = nodes_[n.inputs[1]].shape[0];
        for (std::size_t i = 0; i < g.size(); ++i) {
          da[i] += g[i];
          db[i % nb] += g[i];
        }
        break;
      }
      case Op::Mul: {
        const Node& a = nodes_[n.inputs[0]];
        const Node& b = nodes_[n.inputs[1]];
        std::vector<double>& da = grad_of(n.inputs[0]);
        std::vector<double>& db = grad_of(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          da[i] += g[i] * b.values[i];
          db[i] += g[i] * a.values[i];
        }
        break;
      }
      case Op::Scale: {
        std::vector<double>& da = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) da[i] += n.scalar * g[i];
        break;
      }
      case Op::Gelu: {
        const Node& a = nodes_[n.inputs[0]];
        std::vector<double>& da = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          da[i] += g[i] * gelu_derivative(a.values[i]);
        }
        break;
      }
      case Op::SoftmaxRows: {
        const std::size_t m = n.shape[0], nc = n.shape[1];
        std::vector<double>& da = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < m; ++i) {
          const double* y = n.values.data() + i * nc;
          const double* gy = g.data() + i * nc;
          double dot = 0.0;
          for (std::size_t j = 0; j < nc; ++j) dot += gy[j] * y[j];
          double* row = da.data() + i * nc;
          for (std::size_t j = 0; j < nc; ++j) row[j] += y[j] * (gy[j] - dot);
        }
        break;
      }
      case Op::LayerNorm: {
        const std::size_t m = n.shape[0], nc = n.shape[1];
        const Node& gain = nodes_[n.inputs[1]];
        std::vector<double>& dx = grad_of(n.inputs[0]);
        std::vector<double>& dg = grad_of(n.inputs[1]);
        std::vector<double>& db = grad_of(n.inputs[2]);
        for (std::size_t i = 0; i < m; ++i) {
          const double* xhat = n.aux.data() + i * nc;
          const double inv_std = n.aux[m * nc + i];
          const double* gy = g.data() + i * nc;
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t j = 0; j < nc; ++j) {
            const double dxhat = gy[j] * gain.values[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat[j];
            dg[j] += gy[j] * xhat[j];
            db[j] += gy[j];
          }
          const double inv_n = 1.0 / static_cast<double>(nc);
          double* dxrow = dx.data() + i * nc;
          for (std::size_t j = 0; j < nc; ++j) {
            const double dxhat = gy[j] * gain.values[j];
            dxrow[j] += inv_std * (dxhat - inv_n * sum_dxhat - xhat[j] * inv_n * sum_dxhat_xhat);
          }
        }
        break;
      }
      case Op::Embedding: {
        const std::size_t dim = n.shape[1];
        std::vector<double>& dt = grad_of(n.inputs[0]);
        for (std::size_t t = 0; t < n.ints.size(); ++t) {
          const double* grow = g.data() + t * dim;
          double* trow = dt.data() + static_cast<std::size_t>(n.ints[t]) * dim;
          for (std::size_t j = 0; j < dim; ++j) trow[j] += grow[j];
        }
        break;
      }
      case Op::CrossEntropy: {
        const Node& logits = nodes_[n.inputs[0]];
        const std::size_t tlen = logits.shape[0], vocab = logits.shape[1];
        const int* targets = n.ints.data();
        const int* mask = n.ints.data() + tlen;
        const double upstream = g[0] / n.scalar;
        std::vector<double>& dl = grad_of(n.inputs[0]);
        for (std::size_t t = 0; t < tlen; ++t) {
          if (mask[t] == 0) continue;
          const double* p = n.aux.data() + t * vocab;
          double* row = dl.data() + t * vocab;
          for (std::size_t j = 0; j < vocab; ++j) row[j] += upstream * p[j];
          row[targets[t]] -= upstream;
        }
        break;
      }
      case Op::Sum: {
        std::vector<double>& da = grad_of(n.inputs[0]);
        for (double& v : da) v += g[0];
        break;
      }
      case Op::SliceCols: {
        const Node& a = nodes_[n.inputs[0]];
        const std::size_t m = n.shape[0], w = n.shape[1], nc = a.shape[1];
        const auto start = static_cast<std::size_t>(n.ints[0]);
        std::vector<double>& da = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * w;
          double* darow = da.data() + i * nc + start;
          for (std::size_t j = 0; j < w; ++j) darow[j] += grow[j];
        }
        break;
      }
      case Op::ConcatCols: {
        const std::size_t m = n.shape[0], total = n.shape[1];
        std::size_t col = 0;
        for (NodeId in : n.inputs) {
          const std::size_t w = nodes_[in].shape[1];
          std::vector<double>& da = grad_of(in);
          for (std::size_t i = 0; i < m; ++i) {
            const double* grow = g.data() + i * total + col;
            double* darow = da.data() + i * w;
            for (std::size_t j = 0; j < w; ++j) darow[j] += grow[j];
          }
          col += w;
        }
        break;
      }
    }
  }

  std::map<NodeId, Tensor> result;
  for (NodeId pid : parameter_ids_) {
    Tensor t;
    t.shape = nodes_[pid].shape;
    t.values = grads[pid].empty() ? std::vector<double>(nodes_[pid].values.size(), 0.0)
                                  : std::move(grads[pid]);
    result.emplace(pid, std::move(t));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

GradCheckReport grad_check(const LossBuilder& build,
                           const std::map<std::string, Tensor>& params,
                           std::size_t samples, double h, double tol,
                           std::uint64_t seed) {
  auto eval = [&](const std::map<std::string, Tensor>& p) {
    Graph g;
    std::map<std::string, Tensor> linked;
    for (const auto& [name, tensor] : p) linked.emplace(name, g.parameter(tensor));
    const Tensor loss = build(g, linked);
    if (loss.numel() != 1) throw ContractError("grad_check: loss builder must return a scalar");
    return loss.values[0];
  };

  // Analytic gradients, keyed by parameter name.
  std::map<std::string, std::vector<double>> analytic;
  {
    Graph g;
    std::map<std::string, Tensor> linked;
    for (const auto& [name, tensor] : params) linked.emplace(name, g.parameter(tensor));
    const Tensor loss = build(g, linked);
    if (loss.numel() != 1) throw ContractError("grad_check: loss builder must return a scalar");
    auto grads = g.backward(loss);
    for (const auto& [name, linked_tensor] : linked) {
      analytic.emplace(name, grads.at(*linked_tensor.node).values);
    }
  }

  std::vector<std::pair<std::string, std::size_t>> coords;  // flattened coordinate space
  std::size_t total = 0;
  for (const auto& [name, tensor] : params) {
    coords.emplace_back(name, tensor.numel());
    total += tensor.numel();
  }

  Rng rng(seed);
  GradCheckReport report;
  report.samples = samples;
  for (std::size_t s = 0; s < samples; ++s) {
    std::size_t flat = static_cast<std::size_t>(rng.next_below(total));
    std::string pname;
    std::size_t idx = 0;
    for (const auto& [name, count] : coords) {
      if (flat < count) {
        pname = name;
        idx = flat;
        break;
      }
      flat -= count;
    }

    std::map<std::string, Tensor> perturbed = params;
    perturbed.at(pname).values[idx] += h;
    const double up = eval(perturbed);
    perturbed.at(pname).values[idx] -= 2.0 * h;
    const double down = eval(perturbed);
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.at(pname)[idx];
    const double rel = std::abs(a - numeric) /
                       std::max({std::abs(a), std::abs(numeric), 1e-8});
    report.max_rel_err = std::max(report.max_rel_err, rel);
  }
  report.pass = report.max_rel_err <= tol;
  return report;
}

}  // namespace gradcoo
