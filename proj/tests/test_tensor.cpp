#include <cmath>
#include <map>
#include <memory>
#include <vector>

#include "doctest.h"
#include "gradcoo/rng.hpp"
#include "gradcoo/tensor.hpp"
#include "test_helpers.hpp"

using namespace gradcoo;
using testutil::central_difference;
using testutil::random_values;
using testutil::rel_err;

namespace {

// Gradient of a graph-built loss wrt one named parameter, as a flat vector.
std::vector<double> analytic_grad(
    const std::function<Tensor(Graph&, const std::map<std::string, Tensor>&)>& build,
    const std::map<std::string, Tensor>& params, const std::string& wrt) {
  Graph g;
  std::map<std::string, Tensor> linked;
  for (const auto& [name, t] : params) linked.emplace(name, g.parameter(t));
  const Tensor loss = build(g, linked);
  auto grads = g.backward(loss);
  return grads.at(*linked.at(wrt).node).values;
}

double eval_loss(
    const std::function<Tensor(Graph&, const std::map<std::string, Tensor>&)>& build,
    const std::map<std::string, Tensor>& params) {
  Graph g;
  std::map<std::string, Tensor> linked;
  for (const auto& [name, t] : params) linked.emplace(name, g.parameter(t));
  return build(g, linked).values[0];
}

// Checks every coordinate of `wrt` against central differences.
void check_grad_all_coords(
    const std::function<Tensor(Graph&, const std::map<std::string, Tensor>&)>& build,
    std::map<std::string, Tensor> params, const std::string& wrt, double tol,
    double h = 1e-5) {
  const std::vector<double> analytic = analytic_grad(build, params, wrt);
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    auto f = [&](const std::vector<double>& x) {
      auto p = params;
      p.at(wrt).values = x;
      return eval_loss(build, p);
    };
    const double numeric = central_difference(f, params.at(wrt).values, i, h);
    CAPTURE(wrt);
    CAPTURE(i);
    CHECK(rel_err(analytic[i], numeric) < tol);
  }
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("tensor shape validation") {
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), DimensionError);
  const Tensor t = Tensor::matrix(2, 2, {1, 2, 3, 4});
  CHECK(t.at(1, 0) == 3.0);
  CHECK(t.shape_str() == "2x2");
}

TEST_CASE("matmul identity") {
  Graph g;
  const Tensor a = g.input(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  const Tensor b = g.input(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const Tensor c = g.matmul(a, b);
  CHECK(c.values == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Graph g;
  const Tensor a = g.input(Tensor::zeros({2, 3}));
  const Tensor b = g.input(Tensor::zeros({4, 2}));
  try {
    g.matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("2x3") != std::string::npos);
    CHECK(msg.find("4x2") != std::string::npos);
  }
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(11);
  std::map<std::string, Tensor> params;
  params.emplace("a", Tensor::matrix(3, 4, random_values(rng, 12)));
  params.emplace("b", Tensor::matrix(4, 2, random_values(rng, 8)));
  auto build = [](Graph& g, const std::map<std::string, Tensor>& p) {
    return g.sum(g.matmul(p.at("a"), p.at("b")));
  };
  check_grad_all_coords(build, params, "a", 1e-6);
  check_grad_all_coords(build, params, "b", 1e-6);
}

TEST_CASE("matmul_nt matches transposed matmul") {
  Rng rng(12);
  const std::vector<double> av = random_values(rng, 6);
  const std::vector<double> bv = random_values(rng, 6);
  Graph g;
  const Tensor a = g.input(Tensor::matrix(2, 3, av));
  const Tensor b = g.input(Tensor::matrix(2, 3, bv));
  const Tensor c = g.matmul_nt(a, b);
  // reference: c[i][j] = sum_k a[i][k] * b[j][k]
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < 3; ++k) acc += av[i * 3 + k] * bv[j * 3 + k];
      CHECK(c.at(i, j) == doctest::Approx(acc).epsilon(1e-12));
    }
  }
  std::map<std::string, Tensor> params;
  params.emplace("a", Tensor::matrix(2, 3, av));
  params.emplace("b", Tensor::matrix(2, 3, bv));
  auto build = [](Graph& g2, const std::map<std::string, Tensor>& p) {
    return g2.sum(g2.matmul_nt(p.at("a"), p.at("b")));
  };
  check_grad_all_coords(build, params, "a", 1e-6);
  check_grad_all_coords(build, params, "b", 1e-6);
}

TEST_CASE("elementwise add") {
  Graph g;
  const Tensor c = g.add(g.input(Tensor::row({1, 2})), g.input(Tensor::row({3, 4})));
  CHECK(c.values == std::vector<double>{4, 6});
  CHECK_THROWS_AS(g.add(g.input(Tensor::row({1, 2})), g.input(Tensor::row({1, 2, 3}))),
                  DimensionError);
}

TEST_CASE("scale by zero annihilates value and gradient") {
  Graph g;
  const Tensor x = g.parameter(Tensor::row({1.5, -2.5}));
  const Tensor y = g.scale(x, 0.0);
  CHECK(y.values == std::vector<double>{0.0, 0.0});
  const Tensor loss = g.sum(y);
  auto grads = g.backward(loss);
  CHECK(grads.at(*x.node).values == std::vector<double>{0.0, 0.0});
}

TEST_CASE("mul gradient vs finite differences on random 5-vectors") {
  Rng rng(13);
  std::map<std::string, Tensor> params;
  params.emplace("a", Tensor::row(random_values(rng, 5)));
  params.emplace("b", Tensor::row(random_values(rng, 5)));
  auto build = [](Graph& g, const std::map<std::string, Tensor>& p) {
    return g.sum(g.mul(p.at("a"), p.at("b")));
  };
  check_grad_all_coords(build, params, "a", 1e-6);
  check_grad_all_coords(build, params, "b", 1e-6);
}

TEST_CASE("bias broadcast add") {
  std::map<std::string, Tensor> params;
  params.emplace("x", Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  params.emplace("b", Tensor::row({10, 20, 30}));
  auto build = [](Graph& g, const std::map<std::string, Tensor>& p) {
    return g.sum(g.add(p.at("x"), p.at("b")));
  };
  Graph g;
  const Tensor out = g.add(g.input(params.at("x")), g.input(params.at("b")));
  CHECK(out.at(1, 2) == 36.0);
  check_grad_all_coords(build, params, "b", 1e-6);
}

TEST_CASE("gelu fixed points and derivative") {
  Graph g;
  const Tensor y = g.gelu(g.input(Tensor::row({0.0, 6.0, 8.0})));
  CHECK(y.values[0] == 0.0);
  CHECK(std::abs(y.values[1] - 6.0) < 1e-6);
  CHECK(std::abs(y.values[2] - 8.0) < 1e-6);

  std::map<std::string, Tensor> params;
  params.emplace("x", Tensor::row({0.5}));
  auto build = [](Graph& g2, const std::map<std::string, Tensor>& p) {
    return g2.sum(g2.gelu(p.at("x")));
  };
  check_grad_all_coords(build, params, "x", 1e-6);
}

TEST_CASE("softmax rows") {
  Graph g;
  const Tensor y = g.softmax_rows(g.input(Tensor::matrix(1, 3, {0, 0, 0})));
  for (double v : y.values) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const Tensor z = g.softmax_rows(g.input(Tensor::matrix(1, 2, {1000.0, 0.0})));
  CHECK(z.values[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(z.values[1] < 1e-300);
  CHECK(std::isfinite(z.values[0]));

  SUBCASE("rows sum to one within 1e-12 on random input") {
    Rng rng(14);
    Graph g2;
    const Tensor s = g2.softmax_rows(g2.input(Tensor::matrix(6, 9, random_values(rng, 54))));
    for (std::size_t i = 0; i < 6; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < 9; ++j) acc += s.at(i, j);
      CHECK(std::abs(acc - 1.0) <= 1e-12);
    }
  }

  SUBCASE("jacobian-vector product vs finite differences") {
    Rng rng(15);
    const std::vector<double> upstream = random_values(rng, 4);
    std::map<std::string, Tensor> params;
    params.emplace("x", Tensor::matrix(1, 4, random_values(rng, 4)));
    auto build = [upstream](Graph& g2, const std::map<std::string, Tensor>& p) {
      return g2.sum(g2.mul(g2.softmax_rows(p.at("x")),
                           g2.input(Tensor::matrix(1, 4, upstream))));
    };
    check_grad_all_coords(build, params, "x", 1e-6);
  }
}

TEST_CASE("layer_norm") {
  Graph g;
  const Tensor gain = g.input(Tensor::row({1, 1, 1, 1}));
  const Tensor bias = g.input(Tensor::row({0, 0, 0, 0}));

  SUBCASE("constant row maps to zero row") {
    const Tensor y = g.layer_norm(g.input(Tensor::matrix(1, 4, {3, 3, 3, 3})), gain, bias);
    for (double v : y.values) CHECK(v == 0.0);
  }

  SUBCASE("output rows have near-zero mean") {
    Rng rng(16);
    const Tensor y =
        g.layer_norm(g.input(Tensor::matrix(5, 4, random_values(rng, 20))), gain, bias);
    for (std::size_t i = 0; i < 5; ++i) {
      double mean = 0.0;
      for (std::size_t j = 0; j < 4; ++j) mean += y.at(i, j);
      mean /= 4.0;
      CHECK(std::abs(mean) < 1e-10);
    }
  }

  SUBCASE("rejects single-column input") {
    CHECK_THROWS_AS(g.layer_norm(g.input(Tensor::matrix(2, 1, {1, 2})),
                                 g.input(Tensor::row({1})), g.input(Tensor::row({0}))),
                    DimensionError);
  }

  SUBCASE("gradients vs finite differences") {
    Rng rng(17);
    std::map<std::string, Tensor> params;
    params.emplace("x", Tensor::matrix(2, 5, random_values(rng, 10)));
    params.emplace("g", Tensor::row(random_values(rng, 5, 0.5, 1.5)));
    params.emplace("b", Tensor::row(random_values(rng, 5, -0.5, 0.5)));
    Rng rng2(18);
    const std::vector<double> upstream = random_values(rng2, 10);
    auto build = [upstream](Graph& g2, const std::map<std::string, Tensor>& p) {
      return g2.sum(g2.mul(g2.layer_norm(p.at("x"), p.at("g"), p.at("b")),
                           g2.input(Tensor::matrix(2, 5, upstream))));
    };
    check_grad_all_coords(build, params, "x", 1e-5);
    check_grad_all_coords(build, params, "g", 1e-5);
    check_grad_all_coords(build, params, "b", 1e-5);
  }
}

TEST_CASE("embedding lookup") {
  SUBCASE("repeated ids scatter-add into the table gradient") {
    Graph g;
    const Tensor table = g.parameter(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
    const Tensor rows = g.embedding_lookup(table, {0, 0});
    CHECK(rows.values == std::vector<double>{1, 2, 1, 2});
    auto grads = g.backward(g.sum(rows));
    CHECK(grads.at(*table.node).values == std::vector<double>{2, 2, 0, 0, 0, 0});
  }

  SUBCASE("out-of-range id") {
    Graph g;
    const Tensor table = g.input(Tensor::zeros({3, 2}));
    CHECK_THROWS_AS(g.embedding_lookup(table, {3}), TokenRangeError);
    CHECK_THROWS_AS(g.embedding_lookup(table, {-1}), TokenRangeError);
  }

  SUBCASE("backward vs finite differences on a 5x3 table") {
    Rng rng(19);
    std::map<std::string, Tensor> params;
    params.emplace("t", Tensor::matrix(5, 3, random_values(rng, 15)));
    Rng rng2(20);
    const std::vector<double> upstream = random_values(rng2, 12);
    auto build = [upstream](Graph& g, const std::map<std::string, Tensor>& p) {
      return g.sum(g.mul(g.embedding_lookup(p.at("t"), {4, 1, 1, 0}),
                         g.input(Tensor::matrix(4, 3, upstream))));
    };
    check_grad_all_coords(build, params, "t", 1e-6);
  }
}

TEST_CASE("cross entropy") {
  SUBCASE("uniform logits, single masked position") {
    Graph g;
    const Tensor logits = g.input(Tensor::zeros({2, 8}));
    const Tensor loss = g.cross_entropy(logits, {3, 5}, {0, 1});
    CHECK(loss.values[0] == doctest::Approx(std::log(8.0)).epsilon(1e-12));
  }

  SUBCASE("confident correct prediction has near-zero loss") {
    Graph g;
    Tensor logits = Tensor::zeros({1, 4});
    logits.values[2] = 40.0;
    const Tensor loss = g.cross_entropy(g.input(logits), {2}, {1});
    CHECK(loss.values[0] < 1e-6);
  }

  SUBCASE("all-zero mask is rejected") {
    Graph g;
    CHECK_THROWS_AS(g.cross_entropy(g.input(Tensor::zeros({2, 4})), {0, 1}, {0, 0}),
                    EmptyLossError);
  }

  SUBCASE("gradient vs finite differences, T=3 V=5") {
    Rng rng(21);
    std::map<std::string, Tensor> params;
    params.emplace("logits", Tensor::matrix(3, 5, random_values(rng, 15)));
    auto build = [](Graph& g, const std::map<std::string, Tensor>& p) {
      return g.cross_entropy(p.at("logits"), {1, 4, 2}, {1, 0, 1});
    };
    check_grad_all_coords(build, params, "logits", 1e-5);
  }
}

TEST_CASE("slice and concat columns") {
  Rng rng(22);
  const std::vector<double> xv = random_values(rng, 12);
  Graph g;
  const Tensor x = g.input(Tensor::matrix(3, 4, xv));
  const Tensor left = g.slice_cols(x, 0, 2);
  const Tensor right = g.slice_cols(x, 2, 2);
  const Tensor glued = g.concat_cols({left, right});
  CHECK(glued.values == xv);
  CHECK_THROWS_AS(g.slice_cols(x, 3, 2), DimensionError);

  std::map<std::string, Tensor> params;
  params.emplace("x", Tensor::matrix(3, 4, xv));
  Rng rng2(23);
  const std::vector<double> upstream = random_values(rng2, 6);
  auto build = [upstream](Graph& g2, const std::map<std::string, Tensor>& p) {
    return g2.sum(g2.mul(g2.slice_cols(p.at("x"), 1, 2),
                         g2.input(Tensor::matrix(3, 2, upstream))));
  };
  check_grad_all_coords(build, params, "x", 1e-6);
}

TEST_CASE("backward basics") {
  SUBCASE("sum gradient is all ones") {
    Graph g;
    const Tensor x = g.parameter(Tensor::row({1, 2, 3}));
    auto grads = g.backward(g.sum(x));
    CHECK(grads.at(*x.node).values == std::vector<double>{1, 1, 1});
  }

  SUBCASE("half squared norm gradient is the point itself") {
    Graph g;
    const Tensor x = g.parameter(Tensor::row({3, -1}));
    const Tensor loss = g.scale(g.sum(g.mul(x, x)), 0.5);
    auto grads = g.backward(loss);
    CHECK(grads.at(*x.node).values == std::vector<double>{3, -1});
  }

  SUBCASE("non-scalar loss is rejected") {
    Graph g;
    const Tensor x = g.parameter(Tensor::row({1, 2}));
    CHECK_THROWS_AS(g.backward(x), ContractError);
  }

  SUBCASE("tensor from another graph is rejected") {
    Graph g1, g2;
    const Tensor x = g1.parameter(Tensor::row({1, 2}));
    CHECK_THROWS_AS(g2.sum(x), ContractError);
  }

  SUBCASE("backward is bitwise deterministic") {
    auto run = [] {
      Rng rng(24);
      Graph g;
      const Tensor x = g.parameter(Tensor::matrix(4, 4, random_values(rng, 16)));
      const Tensor y = g.parameter(Tensor::matrix(4, 4, random_values(rng, 16)));
      const Tensor loss = g.sum(g.gelu(g.matmul(x, g.softmax_rows(y))));
      auto grads = g.backward(loss);
      std::vector<double> flat;
      for (const auto& [id, t] : grads) {
        flat.insert(flat.end(), t.values.begin(), t.values.end());
      }
      return flat;
    };
    CHECK(run() == run());
  }

  SUBCASE("gradient of a sum of losses equals the sum of gradients") {
    Rng rng(25);
    const std::vector<double> xv = random_values(rng, 6);
    const std::vector<double> uv = random_values(rng, 6);

    auto grad_single = [&](int which) {
      Graph g;
      const Tensor x = g.parameter(Tensor::row(xv));
      const Tensor u = g.input(Tensor::row(uv));
      const Tensor l1 = g.sum(g.mul(x, u));
      const Tensor l2 = g.sum(g.gelu(x));
      const Tensor loss = which == 0 ? l1 : which == 1 ? l2 : g.add(l1, l2);
      return g.backward(loss).at(*x.node).values;
    };
    const auto g1 = grad_single(0);
    const auto g2 = grad_single(1);
    const auto gsum = grad_single(2);
    for (std::size_t i = 0; i < 6; ++i) {
      CHECK(std::abs(gsum[i] - (g1[i] + g2[i])) <= 1e-12);
    }
  }
}

TEST_CASE("every differentiable op matches finite differences on random inputs") {
  // One randomized pass per op over inputs drawn in [-2, 2], h = 1e-5.
  Rng rng(26);
  for (int round = 0; round < 3; ++round) {
    std::map<std::string, Tensor> params;
    params.emplace("m", Tensor::matrix(2, 3, random_values(rng, 6)));
    params.emplace("n", Tensor::matrix(3, 2, random_values(rng, 6)));
    params.emplace("v", Tensor::row(random_values(rng, 6)));
    params.emplace("g", Tensor::row(random_values(rng, 3, 0.5, 1.5)));
    params.emplace("b", Tensor::row(random_values(rng, 3, -0.5, 0.5)));
    const std::vector<double> upstream = random_values(rng, 4);
    auto build = [upstream](Graph& g2, const std::map<std::string, Tensor>& p) {
      const Tensor prod = g2.matmul(p.at("m"), p.at("n"));            // 2x2
      const Tensor sm = g2.softmax_rows(prod);                        // 2x2
      const Tensor weighted = g2.mul(sm, g2.input(Tensor::matrix(2, 2, upstream)));
      const Tensor ln = g2.layer_norm(p.at("m"), p.at("g"), p.at("b"));  // 2x3
      const Tensor act = g2.gelu(g2.scale(p.at("v"), 0.7));
      return g2.add(g2.add(g2.sum(weighted), g2.sum(ln)), g2.sum(act));
    };
    for (const char* name : {"m", "n", "v", "g", "b"}) {
      check_grad_all_coords(build, params, name, 1e-5);
    }
  }
}

TEST_CASE("grad_check harness") {
  SUBCASE("quadratic passes") {
    std::map<std::string, Tensor> params;
    params.emplace("x", Tensor::row({3.0}));
    auto build = [](Graph& g, const std::map<std::string, Tensor>& p) {
      return g.sum(g.mul(p.at("x"), p.at("x")));
    };
    const GradCheckReport r = grad_check(build, params, 8, 1e-5, 1e-6, 1);
    CHECK(r.pass);
    CHECK(r.max_rel_err < 1e-6);
  }

  SUBCASE("detects a wrong gradient") {
    // The builder computes x^2 on the first call (analytic path) and a
    // different function on subsequent calls (numeric path), standing in for
    // a corrupted backward rule.
    auto calls = std::make_shared<int>(0);
    std::map<std::string, Tensor> params;
    params.emplace("x", Tensor::row({3.0}));
    auto build = [calls](Graph& g, const std::map<std::string, Tensor>& p) {
      const bool first = (*calls)++ == 0;
      const Tensor sq = g.mul(p.at("x"), p.at("x"));
      return first ? g.sum(sq) : g.sum(g.scale(sq, 1.25));
    };
    const GradCheckReport r = grad_check(build, params, 4, 1e-5, 1e-4, 2);
    CHECK_FALSE(r.pass);
    CHECK(r.max_rel_err > 1e-4);
  }
}

}  // TEST_SUITE
