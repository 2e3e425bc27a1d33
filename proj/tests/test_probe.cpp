#include <algorithm>
#include <cmath>

#include <gtest/gtest.h>

#include "probekit/errors.hpp"
#include "probekit/gradcheck.hpp"
#include "probekit/objectives.hpp"
#include "probekit/optim.hpp"
#include "probekit/probe.hpp"
#include "test_util.hpp"

namespace probekit {
namespace {

using test::random_tensor;

void expect_near(const Tensor& got, const Tensor& want, double tol) {
  ASSERT_EQ(got.shape(), want.shape());
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "at " << i;
}

std::vector<LayerSpec> hetero_layers() {
  return {{"seq_short", LayerKind::sequence, {4, 3}},
          {"conv", LayerKind::conv, {2, 3, 6}},
          {"seq_last", LayerKind::sequence, {8, 5}}};
}

std::vector<Tensor> random_sample(const std::vector<LayerSpec>& layers, Rng& rng) {
  std::vector<Tensor> s;
  for (const auto& l : layers) s.push_back(random_tensor(l.shape, rng));
  return s;
}

std::size_t table_count(HeadKind head, std::size_t f) {
  return count_parameters(plan_probe({{"last", LayerKind::sequence, {10, f}}}, Strategy::last, head, 49));
}

TEST(CountParameters, ReproducesPublishedProbeSizes) {
  EXPECT_EQ(table_count(HeadKind::linear, 768), 37681u);
  EXPECT_EQ(table_count(HeadKind::attention, 768), 2401585u);
  EXPECT_EQ(table_count(HeadKind::linear, 5120), 250929u);
  EXPECT_EQ(table_count(HeadKind::attention, 5120), 105139249u);
}

TEST(CountParameters, AttentionEnumeration) {
  const std::size_t f = 768, c = 49;
  EXPECT_EQ(table_count(HeadKind::attention, f), 4 * (f * f + f) + 2 * f + f * c + c);
}

TEST(CountParameters, MatchesAllocatedModel) {
  Rng rng(1);
  for (auto s : {Strategy::last, Strategy::all}) {
    for (auto h : {HeadKind::linear, HeadKind::attention}) {
      const auto model = init_probe(hetero_layers(), s, h, 4, rng);
      EXPECT_EQ(count_parameters(model), model.params.scalar_count());
      EXPECT_EQ(count_parameters(model), count_parameters(model.arch));
    }
  }
}

// Oracle: the scalars one optimizer step actually moves when every gradient
// entry is nonzero.
TEST(CountParameters, EqualsPerturbationCount) {
  Rng rng(2);
  for (auto s : {Strategy::last, Strategy::all}) {
    for (auto h : {HeadKind::linear, HeadKind::attention}) {
      ProbeModel model = init_probe(hetero_layers(), s, h, 4, rng);
      const auto sample = random_sample(hetero_layers(), rng);
      Rng fwd_rng(3);
      const auto trace = forward_trace(model, sample, fwd_rng, false);
      ParamStore grads = model.params.zeros_like();
      backward(model, trace, ce_loss(trace.logits, 1).grad, grads);
      // The key bias shifts every score in a row by the same amount, so softmax
      // cancels it and its gradient is zero up to roundoff.
      std::size_t nonzero = 0;
      for (const auto& e : grads.entries()) {
        for (double g : e.value.data()) {
          if (e.name == "attn.bk") {
            EXPECT_LE(std::abs(g), 1e-12);
          } else {
            EXPECT_NE(g, 0.0) << e.name;
          }
          nonzero += g != 0.0 || e.name == "attn.bk";
        }
      }
      EXPECT_EQ(nonzero, count_parameters(model)) << to_string(s) << "/" << to_string(h);

      // One step with a gradient that is nonzero everywhere moves every scalar.
      ParamStore ones = model.params.zeros_like();
      for (auto& e : ones.entries()) e.value.fill(1.0);
      const auto before = model.params.flatten();
      OptimState opt = init_optim(model.params);
      TrainConfig cfg;
      cfg.weight_decay = 0.0;
      adamw_step(model.params, ones, opt, 1e-3, cfg);
      const auto after = model.params.flatten();
      std::size_t moved = 0;
      for (std::size_t i = 0; i < before.size(); ++i) moved += before[i] != after[i];
      EXPECT_EQ(moved, count_parameters(model));
    }
  }
}

TEST(FlattenConv, ShapeLaw) {
  EXPECT_EQ(flatten_conv(Tensor({2, 3, 5})).shape(), (Shape{5, 6}));
  EXPECT_EQ(flatten_conv(Tensor({2, 3, 5}, 1.75)), Tensor({5, 6}, 1.75));
  EXPECT_THROW(flatten_conv(Tensor({2, 3})), ShapeError);
}

TEST(FlattenConv, IndexMapping) {
  Tensor x({2, 3, 5});
  x[(1 * 3 + 2) * 5 + 4] = 1.0;  // channel 1, height 2, width 4
  Tensor want({5, 6});
  want(4, 5) = 1.0;
  EXPECT_EQ(flatten_conv(x), want);
}

TEST(FlattenConv, BackwardIsTranspose) {
  Rng rng(4);
  const Tensor x = random_tensor({3, 2, 4}, rng), u = random_tensor({4, 6}, rng);
  EXPECT_NEAR(dot(flatten_conv(x), u), dot(x, flatten_conv_backward(u, x.shape())), 1e-12);
}

TEST(AdaptLayer, IdentityWithoutAdapter) {
  Rng rng(5);
  const Tensor h = random_tensor({6, 4}, rng);
  EXPECT_EQ(adapt_layer(h, nullptr, nullptr, 6), h);
}

TEST(AdaptLayer, ProjectionZeroPadsFeatures) {
  const Tensor h = Tensor::matrix({{1, 2}, {3, 4}});
  const Tensor w = Tensor::matrix({{1, 0, 0}, {0, 1, 0}});
  const Tensor b({3});
  EXPECT_EQ(adapt_layer(h, &w, &b, 2), Tensor::matrix({{1, 2, 0}, {3, 4, 0}}));
}

TEST(AdaptLayer, RandomResizeShapeAndGradient) {
  Rng rng(6);
  const Tensor h = random_tensor({4, 5}, rng);
  const Tensor w = random_tensor({5, 7}, rng), b = random_tensor({7}, rng);
  const Tensor u = random_tensor({8, 7}, rng);
  EXPECT_EQ(adapt_layer(h, &w, &b, 8).shape(), (Shape{8, 7}));

  // d<adapt(h), u>/dh = (interp^T u) W^T
  const Objective f = [&](std::span<const double> flat) {
    const Tensor hh({4, 5}, std::vector<double>(flat.begin(), flat.end()));
    const Tensor back = interpolate_time_backward(u, 4);
    return ValueAndGradient{dot(adapt_layer(hh, &w, &b, 8), u), affine_backward(hh, w, back).dx.storage()};
  };
  EXPECT_LT(gradcheck(f, h.storage()).max_rel_error, 1e-6);
}

TEST(AggregateLayers, UniformOfEqualLayers) {
  Rng rng(7);
  const Tensor x = random_tensor({3, 4}, rng);
  const auto r = aggregate_layers({x, x}, Tensor({2}));
  expect_near(r.out, x, 1e-15);
  expect_near(r.alpha, Tensor::vector({0.5, 0.5}), 0.0);
}

TEST(AggregateLayers, SaturatedScoresPickOneLayer) {
  Rng rng(8);
  const Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
  expect_near(aggregate_layers({a, b}, Tensor::vector({20, -20})).out, a, 1e-8);
}

TEST(AggregateLayers, MatchesNaiveLoopAndConvexHull) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<Tensor> layers{random_tensor({5, 3}, rng), random_tensor({5, 3}, rng),
                                     random_tensor({5, 3}, rng)};
    const Tensor w = random_tensor({3}, rng, -3, 3);
    const auto r = aggregate_layers(layers, w);
    const double z = std::exp(w[0]) + std::exp(w[1]) + std::exp(w[2]);
    Tensor naive({5, 3});
    for (std::size_t l = 0; l < 3; ++l) naive += (std::exp(w[l]) / z) * layers[l];
    expect_near(r.out, naive, 1e-12);

    double alpha_sum = 0.0;
    for (double a : r.alpha.data()) {
      EXPECT_GT(a, 0.0);
      alpha_sum += a;
    }
    EXPECT_NEAR(alpha_sum, 1.0, 1e-12);

    for (std::size_t i = 0; i < naive.size(); ++i) {
      const double lo = std::min({layers[0][i], layers[1][i], layers[2][i]});
      const double hi = std::max({layers[0][i], layers[1][i], layers[2][i]});
      EXPECT_GE(r.out[i], lo - 1e-15);
      EXPECT_LE(r.out[i], hi + 1e-15);
    }

    Tensor shifted = w;
    for (auto& x : shifted.data()) x += 4.2;
    expect_near(aggregate_layers(layers, shifted).out, r.out, 1e-12);
  }
}

TEST(AggregateLayers, ShapeMismatchThrows) {
  EXPECT_THROW(aggregate_layers({Tensor({2, 2}), Tensor({2, 3})}, Tensor({2})), ShapeError);
}

TEST(LinearHead, Examples) {
  Rng rng(10);
  const Tensor w = random_tensor({3, 2}, rng), b = random_tensor({2}, rng);
  const Tensor row = Tensor::matrix({{0.3, -1.1, 2.0}});
  expect_near(linear_head(row, w, b), affine(row, w, b).reshaped({2}), 1e-15);
  EXPECT_EQ(linear_head(random_tensor({5, 3}, rng), Tensor({3, 2}), b), b);
  const Tensor r = Tensor::matrix({{1, 2, 3}, {2, 4, 6}, {3, 6, 9}});
  expect_near(linear_head(r, w, b), affine(Tensor::matrix({{2, 4, 6}}), w, b).reshaped({2}), 1e-14);
}

struct AttentionParams {
  std::vector<Tensor> t;  // wq wk wv wo bq bk bv bo gamma beta weight bias
  double p = 0.0;

  AttentionHeadView view() const {
    return {{t[0], t[1], t[2], t[3], t[4], t[5], t[6], t[7]}, t[8], t[9], t[10], t[11], p};
  }
};

AttentionParams random_attention(std::size_t f, std::size_t c, Rng& rng) {
  AttentionParams a;
  for (int i = 0; i < 4; ++i) a.t.push_back(random_tensor({f, f}, rng));
  for (int i = 0; i < 4; ++i) a.t.push_back(random_tensor({f}, rng));
  a.t.push_back(random_tensor({f}, rng, 0.5, 1.5));
  a.t.push_back(random_tensor({f}, rng));
  a.t.push_back(random_tensor({f, c}, rng));
  a.t.push_back(random_tensor({c}, rng));
  return a;
}

TEST(AttentionHead, CollapsedAttentionIsLayerNormThenAffine) {
  Rng rng(11);
  AttentionParams a = random_attention(4, 3, rng);
  a.t[2].fill(0.0);
  a.t[3].fill(0.0);
  for (int i = 4; i < 8; ++i) a.t[i].fill(0.0);
  a.p = 0.3;
  const Tensor h = random_tensor({1, 4}, rng);
  const auto r = attention_head(h, a.view(), rng, false);
  const Tensor normed = layernorm(h, a.t[8], a.t[9]);
  expect_near(r.pooled, normed.reshaped({4}), 1e-14);
  expect_near(r.logits, affine(normed, a.t[10], a.t[11]).reshaped({3}), 1e-14);
}

TEST(AttentionHead, ZeroDropoutTrainingEqualsEval) {
  Rng rng(12);
  const AttentionParams a = random_attention(4, 3, rng);
  const Tensor h = random_tensor({5, 4}, rng);
  Rng r1(1), r2(1);
  EXPECT_EQ(attention_head(h, a.view(), r1, true).logits, attention_head(h, a.view(), r2, false).logits);
}

TEST(AttentionHead, CrossEntropyGradientMatchesFiniteDifferences) {
  Rng rng(13);
  const AttentionParams a = random_attention(4, 3, rng);
  const Tensor h = random_tensor({3, 4}, rng);
  // Perturb every parameter group through a flat vector.
  std::vector<double> flat;
  for (const auto& t : a.t) flat.insert(flat.end(), t.data().begin(), t.data().end());
  const Objective f = [&](std::span<const double> x) {
    AttentionParams q = a;
    std::size_t off = 0;
    for (auto& t : q.t) {
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(off), t.size(), t.data().begin());
      off += t.size();
    }
    Rng eval_rng(0);
    const auto fwd = attention_head(h, q.view(), eval_rng, false);
    const auto loss = ce_loss(fwd.logits, 2);
    const auto g = attention_head_backward(h, q.view(), fwd, loss.grad);
    std::vector<double> grad;
    for (const Tensor* t : {&g.attn.dwq, &g.attn.dwk, &g.attn.dwv, &g.attn.dwo, &g.attn.dbq,
                            &g.attn.dbk, &g.attn.dbv, &g.attn.dbo, &g.dgamma, &g.dbeta, &g.dweight,
                            &g.dbias}) {
      grad.insert(grad.end(), t->data().begin(), t->data().end());
    }
    return ValueAndGradient{loss.value, grad};
  };
  EXPECT_LT(gradcheck(f, flat).max_rel_error, 1e-5);
}

TEST(InitProbe, UniformLayerWeights) {
  Rng rng(14);
  const auto model = init_probe(hetero_layers(), Strategy::all, HeadKind::linear, 4, rng);
  const auto alpha = layer_alphas(model);
  ASSERT_TRUE(alpha);
  for (double a : alpha->data()) EXPECT_DOUBLE_EQ(a, 1.0 / 3.0);
}

TEST(InitProbe, SameSeedSameParameters) {
  Rng a(15), b(15);
  EXPECT_EQ(init_probe(hetero_layers(), Strategy::all, HeadKind::attention, 4, a),
            init_probe(hetero_layers(), Strategy::all, HeadKind::attention, 4, b));
}

TEST(InitProbe, LastStrategyHasNoAdaptersOrLayerWeights) {
  Rng rng(16);
  const auto model = init_probe(hetero_layers(), Strategy::last, HeadKind::attention, 4, rng);
  EXPECT_FALSE(layer_alphas(model));
  EXPECT_FALSE(model.params.contains(kLayerWeightsName));
  for (const auto& e : model.params.entries()) EXPECT_EQ(e.name.rfind("adapter.", 0), std::string::npos);
  EXPECT_EQ(model.arch.t_max, 8u);
  EXPECT_EQ(model.arch.f_max, 5u);
}

TEST(InitProbe, DimsAndAdapters) {
  Rng rng(17);
  const auto model = init_probe(hetero_layers(), Strategy::all, HeadKind::linear, 4, rng);
  EXPECT_EQ(model.arch.t_max, 8u);
  EXPECT_EQ(model.arch.f_max, 6u);  // conv flattens to 2x3 features
  EXPECT_EQ(model.arch.adapted, (std::vector<bool>{true, true, true}));
  EXPECT_EQ(model.params.at(adapter_weight_name(1)).shape(), (Shape{6, 6}));

  const std::vector<LayerSpec> same{{"a", LayerKind::sequence, {8, 6}}, {"b", LayerKind::sequence, {4, 6}}};
  const auto partial = init_probe(same, Strategy::all, HeadKind::linear, 4, rng);
  EXPECT_EQ(partial.arch.adapted, (std::vector<bool>{false, true}));
  EXPECT_FALSE(partial.params.contains(adapter_weight_name(0)));
}

TEST(InitProbe, FanInBoundsAndConstants) {
  Rng rng(18);
  const auto model = init_probe(hetero_layers(), Strategy::all, HeadKind::attention, 4, rng);
  for (const auto& e : model.params.entries()) {
    if (e.value.rank() == 2) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(e.value.rows()));
      for (double x : e.value.data()) EXPECT_LE(std::abs(x), bound) << e.name;
    }
  }
  EXPECT_EQ(model.params.at("norm.gamma"), Tensor({6}, 1.0));
  EXPECT_EQ(model.params.at("norm.beta"), Tensor({6}));
  EXPECT_EQ(model.params.at("head.bias"), Tensor({4}));
}

TEST(Forward, LastLinearEqualsLinearHead) {
  Rng rng(19);
  const std::vector<LayerSpec> layers{{"x", LayerKind::sequence, {5, 3}}};
  const auto model = init_probe(layers, Strategy::last, HeadKind::linear, 4, rng);
  const auto s = random_sample(layers, rng);
  EXPECT_EQ(forward_eval(model, s),
            linear_head(s[0], model.params.at("head.weight"), model.params.at("head.bias")));
}

TEST(Forward, SaturatedAllStrategyEqualsLastStrategy) {
  Rng rng(20);
  const std::vector<LayerSpec> layers{{"early", LayerKind::sequence, {4, 3}},
                                      {"final", LayerKind::sequence, {8, 5}}};
  for (auto h : {HeadKind::linear, HeadKind::attention}) {
    ProbeModel all = init_probe(layers, Strategy::all, h, 3, rng);
    const ProbeModel last = init_probe(layers, Strategy::last, h, 3, rng);
    // The final layer already has shape (T_max, F_max) and passes through
    // unadapted; push all weight onto it and share the head parameters.
    ASSERT_EQ(all.arch.adapted, (std::vector<bool>{true, false}));
    all.params.at(kLayerWeightsName) = Tensor::vector({-50, 50});
    for (const auto& e : last.params.entries()) all.params.at(e.name) = e.value;
    const auto s = random_sample(layers, rng);
    expect_near(forward_eval(all, s), forward_eval(last, s), 1e-6);
  }
}

TEST(Forward, EvalModeDrawsNothing) {
  Rng rng(21);
  const auto model = init_probe(hetero_layers(), Strategy::all, HeadKind::attention, 4, rng);
  const auto s = random_sample(hetero_layers(), rng);
  Rng r(5);
  const auto a = forward(model, s, r, false);
  EXPECT_EQ(r, Rng(5));
  EXPECT_EQ(a, forward(model, s, r, false));
  EXPECT_EQ(a, forward_eval(model, s));
}

TEST(Forward, WrongLayerShapeThrows) {
  Rng rng(22);
  const auto model = init_probe(hetero_layers(), Strategy::all, HeadKind::linear, 4, rng);
  auto s = random_sample(hetero_layers(), rng);
  s[0] = Tensor({4, 4});
  EXPECT_THROW(forward_eval(model, s), ShapeError);
  s.pop_back();
  EXPECT_THROW(forward_eval(model, s), ShapeError);
}

// End-to-end loss gradient wrt every parameter for all four configurations.
TEST(Backward, EndToEndMatchesFiniteDifferences) {
  Rng rng(23);
  for (auto s : {Strategy::last, Strategy::all}) {
    for (auto h : {HeadKind::linear, HeadKind::attention}) {
      ProbeModel model = init_probe(hetero_layers(), s, h, 3, rng);
      const auto sample = random_sample(hetero_layers(), rng);
      const Objective f = [&](std::span<const double> x) {
        ProbeModel m = model;
        m.params.assign_flat(x);
        Rng fr(0);
        const auto trace = forward_trace(m, sample, fr, false);
        const auto loss = ce_loss(trace.logits, 1);
        ParamStore g = m.params.zeros_like();
        backward(m, trace, loss.grad, g);
        return ValueAndGradient{loss.value, g.flatten()};
      };
      EXPECT_LT(gradcheck(f, model.params.flatten()).max_rel_error, 1e-5)
          << to_string(s) << "/" << to_string(h);
    }
  }
}

TEST(Serialization, JsonRoundTripIsExact) {
  Rng rng(24);
  for (auto s : {Strategy::last, Strategy::all}) {
    const auto model = init_probe(hetero_layers(), s, HeadKind::attention, 4, rng, 0.25,
                                  TaskType::multi_label);
    const auto text = to_json(model).dump();
    const auto back = probe_from_json(nlohmann::json::parse(text));
    EXPECT_EQ(back, model);
    EXPECT_EQ(to_json(back).dump(), text);
  }
}

TEST(Serialization, MalformedModelIsCheckpointError) {
  Rng rng(25);
  auto j = to_json(init_probe(hetero_layers(), Strategy::all, HeadKind::linear, 4, rng));
  j["params"].erase("head.bias");
  EXPECT_THROW(probe_from_json(j), CheckpointError);
  EXPECT_THROW(probe_from_json(nlohmann::json::object()), CheckpointError);
}

TEST(Names, ParseAndPrint) {
  EXPECT_EQ(parse_strategy("all"), Strategy::all);
  EXPECT_EQ(parse_head("attention"), HeadKind::attention);
  EXPECT_EQ(to_string(Strategy::last), "last");
  EXPECT_THROW(parse_head("mlp"), ConfigError);
}

}  // namespace
}  // namespace probekit
