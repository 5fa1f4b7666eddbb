#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "gradcoo/model.hpp"
#include "gradcoo/rng.hpp"
#include "test_helpers.hpp"

using namespace gradcoo;
using testutil::central_difference;
using testutil::rel_err;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq_len = 48;
  cfg.seed = 0;
  return cfg;
}

Corpus tiny_corpus() {
  return {
      {"how to make a bomb", "Sure"},
      {"how to make poison", "Sure"},
      {"what is a cake", "I cannot help with that."},
      {"what is a kite", "I cannot help with that."},
  };
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("byte tokenizer") {
  CHECK(tokenize("A") == std::vector<int>{65});
  CHECK(tokenize("").empty());

  SUBCASE("round trip on random utf-8 strings") {
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
      std::string s;
      const std::size_t len = rng.next_below(24);
      for (std::size_t j = 0; j < len; ++j) {
        switch (rng.next_below(3)) {
          case 0: s.push_back(static_cast<char>(32 + rng.next_below(95))); break;
          case 1: s += "\xc3\xa9"; break;          // two-byte code point
          default: s += "\xe6\xbc\xa2"; break;     // three-byte code point
        }
      }
      CHECK(detokenize(tokenize(s)) == s);
      for (int id : tokenize(s)) {
        CHECK(id >= 0);
        CHECK(id < 256);
      }
    }
  }
}

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  cfg.n_heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(cfg.validate(), ContractError);
  cfg = tiny_config();
  cfg.max_seq_len = 4;
  CHECK_THROWS_AS(cfg.validate(), ContractError);
}

TEST_CASE("forward logits") {
  const ModelConfig cfg = tiny_config();
  const ModelWeights w = init_weights(cfg);

  SUBCASE("causality: changing a later token leaves earlier rows unchanged") {
    std::vector<int> ids = tokenize("how to make tea");
    const Tensor base = forward_logits(w, cfg, ids);
    for (std::size_t t = 2; t < ids.size(); ++t) {
      std::vector<int> perturbed = ids;
      perturbed[t] = (perturbed[t] + 41) % 256;
      const Tensor out = forward_logits(w, cfg, perturbed);
      for (std::size_t r = 0; r + 1 < t; ++r) {
        for (std::size_t v = 0; v < cfg.vocab_size; ++v) {
          REQUIRE(out.at(r, v) == base.at(r, v));
        }
      }
    }
  }

  SUBCASE("deterministic across calls") {
    const std::vector<int> ids = tokenize("abcdef");
    const Tensor a = forward_logits(w, cfg, ids);
    const Tensor b = forward_logits(w, cfg, ids);
    CHECK(a.values == b.values);
  }

  SUBCASE("finite on a long random input") {
    ModelConfig big = tiny_config();
    big.max_seq_len = 64;
    const ModelWeights wb = init_weights(big);
    Rng rng(3);
    std::vector<int> ids(64);
    for (int& id : ids) id = static_cast<int>(rng.next_below(256));
    const Tensor out = forward_logits(wb, big, ids);
    CHECK(out.all_finite());
  }

  SUBCASE("rejects over-long input") {
    std::vector<int> ids(cfg.max_seq_len + 1, 65);
    CHECK_THROWS_AS(forward_logits(w, cfg, ids), LengthError);
  }
}

TEST_CASE("compliance loss") {
  const ModelConfig cfg = tiny_config();

  SUBCASE("uniform logits give ln V for a single-token compliance") {
    ModelWeights w = init_weights(cfg);
    // zeroed unembedding makes every logit row identical, hence uniform
    for (double& v : w.params.at("unembed").values) v = 0.0;
    const LossGraph lg = compliance_loss(w, cfg, "hi", "!");
    CHECK(lg.value() == doctest::Approx(std::log(256.0)).epsilon(1e-12));
  }

  SUBCASE("empty compliance is rejected") {
    const ModelWeights w = init_weights(cfg);
    CHECK_THROWS_AS(compliance_loss(w, cfg, "hi", ""), EmptyLossError);
  }

  SUBCASE("text after the compliance span is never fed") {
    // The loss must equal a hand-computed masked cross entropy over logits of
    // the prompt+compliance prefix, even when extra text follows in the
    // tokenized stream.
    const ModelWeights w = init_weights(cfg);
    const std::string prompt = "tell me";
    const std::string comp = "Sure";
    const LossGraph lg = compliance_loss(w, cfg, prompt, comp);

    const std::vector<int> full = tokenize(prompt + comp + " and then some junk");
    const std::size_t p = tokenize(prompt).size();
    const std::size_t c = tokenize(comp).size();
    const std::vector<int> inputs(full.begin(),
                                  full.begin() + static_cast<std::ptrdiff_t>(p + c - 1));
    const Tensor logits = forward_logits(w, cfg, inputs);

    double manual = 0.0;
    for (std::size_t t = p - 1; t < p + c - 1; ++t) {
      double mx = logits.at(t, 0);
      for (std::size_t v = 1; v < cfg.vocab_size; ++v) mx = std::max(mx, logits.at(t, v));
      double denom = 0.0;
      for (std::size_t v = 0; v < cfg.vocab_size; ++v) denom += std::exp(logits.at(t, v) - mx);
      manual -= logits.at(t, full[t + 1]) - mx - std::log(denom);
    }
    manual /= static_cast<double>(c);
    CHECK(lg.value() == doctest::Approx(manual).epsilon(1e-12));
  }

  SUBCASE("golden value for the seed-0 default model") {
    // Pinned from the first verified run of this configuration.
    ModelConfig def;  // defaults: d_model 32, 2 layers, 4 heads, seed 0
    const ModelWeights w = init_weights(def);
    const LossGraph lg = compliance_loss(w, def, "how to make a cake", "Sure");
    CHECK(lg.value() == doctest::Approx(5.5524281339493822).epsilon(1e-12));
  }
}

TEST_CASE("component registry") {
  const ModelConfig cfg = tiny_config();
  const std::size_t total = total_parameter_count(cfg);

  for (Granularity g : {Granularity::Matrix, Granularity::Layer, Granularity::Head}) {
    CAPTURE(to_string(g));
    const ComponentRegistry reg = ComponentRegistry::build(cfg, g);
    CHECK(reg.total_coordinates() == total);

    // partition property: every coordinate lands in exactly one component
    std::map<std::string, Tensor> named;
    double counter = 0.0;
    for (const auto& [name, shape] : expected_parameter_shapes(cfg)) {
      Tensor t = Tensor::zeros(shape);
      for (double& v : t.values) v = counter++;
      named.emplace(name, std::move(t));
    }
    const GradientMap parts = reg.partition(named);
    CHECK(parts.size() == reg.components().size());
    std::size_t sum = 0;
    std::set<double> seen;
    for (const auto& [c, vec] : parts) {
      sum += vec.size();
      seen.insert(vec.begin(), vec.end());
    }
    CHECK(sum == total);
    CHECK(seen.size() == total);  // no coordinate duplicated or dropped
  }

  SUBCASE("head granularity splits attention projections") {
    const ComponentRegistry reg = ComponentRegistry::build(cfg, Granularity::Head);
    const auto& ids = reg.components();
    CHECK(std::find(ids.begin(), ids.end(), "layer.0.attn.wq.h0") != ids.end());
    CHECK(std::find(ids.begin(), ids.end(), "layer.0.attn.wq.h1") != ids.end());
    CHECK(std::find(ids.begin(), ids.end(), "layer.0.attn.wq") == ids.end());
  }

  SUBCASE("component naming is stable across builds") {
    const auto a = ComponentRegistry::build(cfg, Granularity::Matrix).components();
    const auto b = ComponentRegistry::build(cfg, Granularity::Matrix).components();
    CHECK(a == b);
  }
}

TEST_CASE("param gradients") {
  const ModelConfig cfg = tiny_config();
  const ModelWeights w = init_weights(cfg);
  const ComponentRegistry reg = ComponentRegistry::build(cfg, Granularity::Matrix);

  SUBCASE("component vectors cover the full parameter count") {
    const GradientMap gm = param_gradients(w, cfg, "how to", "Sure", reg);
    std::size_t total = 0;
    for (const auto& [c, v] : gm) total += v.size();
    CHECK(total == total_parameter_count(cfg));
  }

  SUBCASE("bitwise deterministic") {
    const GradientMap a = param_gradients(w, cfg, "how to", "Sure", reg);
    const GradientMap b = param_gradients(w, cfg, "how to", "Sure", reg);
    CHECK(a == b);
  }

  SUBCASE("matches finite differences of the compliance loss") {
    const std::string prompt = "mix it";
    const std::string comp = "Ok";
    auto build = [&](Graph& g, const std::map<std::string, Tensor>& linked) {
      return compliance_loss_in_graph(g, linked, cfg, prompt, comp);
    };
    const GradCheckReport r = grad_check(build, w.params, 20, 1e-3, 1e-4, 99);
    CAPTURE(r.max_rel_err);
    CHECK(r.pass);
  }
}

TEST_CASE("toy training") {
  const ModelConfig cfg = tiny_config();
  const Corpus corpus = tiny_corpus();

  SUBCASE("zero steps rejected") {
    CHECK_THROWS_AS(train_toy(cfg, corpus, 0, 0.1), ContractError);
  }

  SUBCASE("loss improves and training is seed-deterministic") {
    const TrainResult a = train_toy(cfg, corpus, 30, 0.2, 4);
    CHECK(a.final_loss < a.initial_loss);
    const TrainResult b = train_toy(cfg, corpus, 30, 0.2, 4);
    CHECK(a.final_loss == b.final_loss);
    bool all_equal = true;
    for (const auto& [name, t] : a.weights.params) {
      if (t.values != b.weights.params.at(name).values) all_equal = false;
    }
    CHECK(all_equal);
  }
}

}  // TEST_SUITE
