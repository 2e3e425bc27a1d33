#include "probekit/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>

#include "probekit/gradcheck.hpp"
#include "probekit/objectives.hpp"
#include "probekit/ops.hpp"
#include "probekit/probe.hpp"
#include "probekit/rng.hpp"

namespace probekit {

namespace {

// Flat view over a fixed list of tensor shapes.
struct Pack {
  std::vector<Shape> shapes;

  std::vector<Tensor> unpack(std::span<const double> flat) const {
    std::vector<Tensor> out;
    std::size_t pos = 0;
    for (const auto& s : shapes) {
      const std::size_t n = shape_size(s);
      out.emplace_back(s, std::vector<double>(flat.begin() + pos, flat.begin() + pos + n));
      pos += n;
    }
    return out;
  }

  static std::vector<double> flatten(const std::vector<Tensor>& ts) {
    std::vector<double> flat;
    for (const auto& t : ts) flat.insert(flat.end(), t.data().begin(), t.data().end());
    return flat;
  }
};

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(-1.0, 1.0);
  return t;
}

std::size_t dim_in(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

struct Instance {
  Objective f;
  std::vector<double> point;
};

// Builds f(inputs) = <op(inputs), u> with the gradient from a backward closure.
Instance projected(std::vector<Tensor> inputs, Tensor u,
                   std::function<Tensor(const std::vector<Tensor>&)> fwd,
                   std::function<std::vector<Tensor>(const std::vector<Tensor>&, const Tensor&)> bwd) {
  Pack pack;
  for (const auto& t : inputs) pack.shapes.push_back(t.shape());
  auto point = Pack::flatten(inputs);
  Objective f = [pack, u, fwd, bwd](std::span<const double> flat) {
    const auto xs = pack.unpack(flat);
    const Tensor y = fwd(xs);
    return ValueAndGradient{dot(y, u), Pack::flatten(bwd(xs, u))};
  };
  return {std::move(f), std::move(point)};
}

Instance matmul_instance(Rng& rng) {
  const auto m = dim_in(rng, 1, 5), k = dim_in(rng, 1, 5), n = dim_in(rng, 1, 5);
  auto a = random_tensor({m, k}, rng), b = random_tensor({k, n}, rng);
  return projected({a, b}, random_tensor({m, n}, rng),
                   [](const auto& x) { return matmul(x[0], x[1]); },
                   [](const auto& x, const Tensor& u) {
                     auto g = matmul_backward(x[0], x[1], u);
                     return std::vector<Tensor>{g.da, g.db};
                   });
}

Instance affine_instance(Rng& rng) {
  const auto t = dim_in(rng, 1, 5), i = dim_in(rng, 1, 5), o = dim_in(rng, 1, 5);
  return projected({random_tensor({t, i}, rng), random_tensor({i, o}, rng), random_tensor({o}, rng)},
                   random_tensor({t, o}, rng),
                   [](const auto& x) { return affine(x[0], x[1], x[2]); },
                   [](const auto& x, const Tensor& u) {
                     auto g = affine_backward(x[0], x[1], u);
                     return std::vector<Tensor>{g.dx, g.dw, g.db};
                   });
}

Instance softmax_instance(Rng& rng) {
  const auto n = dim_in(rng, 1, 6);
  return projected({random_tensor({n}, rng)}, random_tensor({n}, rng),
                   [](const auto& x) { return softmax(x[0]); },
                   [](const auto& x, const Tensor& u) {
                     return std::vector<Tensor>{softmax_backward(softmax(x[0]), u)};
                   });
}

Instance softmax_rows_instance(Rng& rng) {
  const auto r = dim_in(rng, 1, 4), c = dim_in(rng, 1, 5);
  return projected({random_tensor({r, c}, rng)}, random_tensor({r, c}, rng),
                   [](const auto& x) { return softmax_rows(x[0]); },
                   [](const auto& x, const Tensor& u) {
                     return std::vector<Tensor>{softmax_rows_backward(softmax_rows(x[0]), u)};
                   });
}

Instance layernorm_instance(Rng& rng) {
  const auto t = dim_in(rng, 1, 4), f = dim_in(rng, 2, 6);
  return projected({random_tensor({t, f}, rng), random_tensor({f}, rng), random_tensor({f}, rng)},
                   random_tensor({t, f}, rng),
                   [](const auto& x) { return layernorm(x[0], x[1], x[2]); },
                   [](const auto& x, const Tensor& u) {
                     auto g = layernorm_backward(layernorm_forward(x[0], x[1], x[2]), x[1], u);
                     return std::vector<Tensor>{g.dx, g.dgamma, g.dbeta};
                   });
}

Instance interpolate_instance(Rng& rng) {
  const auto t_in = dim_in(rng, 1, 6), f = dim_in(rng, 1, 4), t_out = dim_in(rng, 1, 9);
  return projected({random_tensor({t_in, f}, rng)}, random_tensor({t_out, f}, rng),
                   [t_out](const auto& x) { return interpolate_time(x[0], t_out); },
                   [t_in](const auto&, const Tensor& u) {
                     return std::vector<Tensor>{interpolate_time_backward(u, t_in)};
                   });
}

Instance mean_rows_instance(Rng& rng) {
  const auto t = dim_in(rng, 1, 5), f = dim_in(rng, 1, 5);
  return projected({random_tensor({t, f}, rng)}, random_tensor({f}, rng),
                   [](const auto& x) { return mean_rows(x[0]); },
                   [t](const auto&, const Tensor& u) {
                     return std::vector<Tensor>{mean_rows_backward(u, t)};
                   });
}

Instance flatten_conv_instance(Rng& rng) {
  const Shape s{dim_in(rng, 1, 3), dim_in(rng, 1, 3), dim_in(rng, 1, 4)};
  return projected({random_tensor(s, rng)}, random_tensor({s[2], s[0] * s[1]}, rng),
                   [](const auto& x) { return flatten_conv(x[0]); },
                   [s](const auto&, const Tensor& u) {
                     return std::vector<Tensor>{flatten_conv_backward(u, s)};
                   });
}

Instance dropout_instance(Rng& rng) {
  const auto t = dim_in(rng, 1, 5), f = dim_in(rng, 1, 5);
  const Rng mask_rng = rng.split();
  return projected({random_tensor({t, f}, rng)}, random_tensor({t, f}, rng),
                   [mask_rng](const auto& x) {
                     Rng r = mask_rng;
                     return dropout(x[0], 0.3, r, true).out;
                   },
                   [mask_rng](const auto& x, const Tensor& u) {
                     Rng r = mask_rng;
                     return std::vector<Tensor>{dropout_backward(dropout(x[0], 0.3, r, true), u)};
                   });
}

AttentionParamsView view_of(const std::vector<Tensor>& x, std::size_t first) {
  return {x[first], x[first + 1], x[first + 2], x[first + 3],
          x[first + 4], x[first + 5], x[first + 6], x[first + 7]};
}

std::vector<Tensor> attention_params(std::size_t f, Rng& rng) {
  std::vector<Tensor> p;
  for (int i = 0; i < 4; ++i) p.push_back(random_tensor({f, f}, rng));
  for (int i = 0; i < 4; ++i) p.push_back(random_tensor({f}, rng));
  return p;
}

Instance self_attention_instance(Rng& rng) {
  const auto t = dim_in(rng, 1, 4), f = dim_in(rng, 1, 4);
  std::vector<Tensor> inputs{random_tensor({t, f}, rng)};
  for (auto& p : attention_params(f, rng)) inputs.push_back(std::move(p));
  return projected(std::move(inputs), random_tensor({t, f}, rng),
                   [](const auto& x) { return self_attention(x[0], view_of(x, 1)); },
                   [](const auto& x, const Tensor& u) {
                     const auto p = view_of(x, 1);
                     auto g = self_attention_backward(x[0], p, self_attention_forward(x[0], p), u);
                     return std::vector<Tensor>{g.dx,  g.dwq, g.dwk, g.dwv, g.dwo,
                                                g.dbq, g.dbk, g.dbv, g.dbo};
                   });
}

Instance ce_instance(Rng& rng) {
  const auto c = dim_in(rng, 2, 6);
  const auto target = static_cast<std::size_t>(rng.below(c));
  Tensor z = random_tensor({c}, rng);
  z *= 3.0;
  Pack pack{{z.shape()}};
  Objective f = [pack, target](std::span<const double> flat) {
    auto r = ce_loss(pack.unpack(flat)[0], target);
    return ValueAndGradient{r.value, Pack::flatten({r.grad})};
  };
  return {std::move(f), Pack::flatten({z})};
}

Instance bce_instance(Rng& rng) {
  const auto c = dim_in(rng, 1, 6);
  Tensor z = random_tensor({c}, rng);
  z *= 3.0;
  Tensor y({c});
  for (auto& v : y.data()) v = static_cast<double>(rng.below(2));
  Pack pack{{z.shape()}};
  Objective f = [pack, y](std::span<const double> flat) {
    auto r = bce_loss(pack.unpack(flat)[0], y);
    return ValueAndGradient{r.value, Pack::flatten({r.grad})};
  };
  return {std::move(f), Pack::flatten({z})};
}

Instance layernorm_matmul_instance(Rng& rng) {
  const auto k = dim_in(rng, 2, 5);
  return projected({random_tensor({2, 3}, rng), random_tensor({3, k}, rng), random_tensor({k}, rng),
                    random_tensor({k}, rng)},
                   random_tensor({2, k}, rng),
                   [](const auto& x) { return layernorm(matmul(x[0], x[1]), x[2], x[3]); },
                   [](const auto& x, const Tensor& u) {
                     const Tensor y = matmul(x[0], x[1]);
                     auto ln = layernorm_backward(layernorm_forward(y, x[2], x[3]), x[2], u);
                     auto mm = matmul_backward(x[0], x[1], ln.dx);
                     return std::vector<Tensor>{mm.da, mm.db, ln.dgamma, ln.dbeta};
                   });
}

Instance adapt_instance(Rng& rng) {
  const auto t = dim_in(rng, 1, 5), f = dim_in(rng, 1, 5);
  const auto t_max = dim_in(rng, 1, 9), f_max = dim_in(rng, 1, 7);
  return projected({random_tensor({t, f}, rng), random_tensor({f, f_max}, rng),
                    random_tensor({f_max}, rng)},
                   random_tensor({t_max, f_max}, rng),
                   [t_max](const auto& x) { return adapt_layer(x[0], &x[1], &x[2], t_max); },
                   [t](const auto& x, const Tensor& u) {
                     auto g = affine_backward(x[0], x[1], interpolate_time_backward(u, t));
                     return std::vector<Tensor>{g.dx, g.dw, g.db};
                   });
}

Instance aggregate_instance(Rng& rng) {
  const auto layers = dim_in(rng, 1, 4), t = dim_in(rng, 1, 4), f = dim_in(rng, 1, 4);
  std::vector<Tensor> inputs;
  for (std::size_t l = 0; l < layers; ++l) inputs.push_back(random_tensor({t, f}, rng));
  inputs.push_back(random_tensor({layers}, rng));
  return projected(std::move(inputs), random_tensor({t, f}, rng),
                   [layers](const auto& x) {
                     std::vector<Tensor> hs(x.begin(), x.begin() + static_cast<long>(layers));
                     return aggregate_layers(hs, x[layers]).out;
                   },
                   [layers](const auto& x, const Tensor& u) {
                     std::vector<Tensor> hs(x.begin(), x.begin() + static_cast<long>(layers));
                     auto g = aggregate_layers_backward(hs, aggregate_layers(hs, x[layers]), u);
                     auto out = g.dadapted;
                     out.push_back(g.dscores);
                     return out;
                   });
}

Instance linear_head_instance(Rng& rng) {
  const auto t = dim_in(rng, 1, 5), f = dim_in(rng, 1, 5), c = dim_in(rng, 2, 4);
  return projected({random_tensor({t, f}, rng), random_tensor({f, c}, rng), random_tensor({c}, rng)},
                   random_tensor({c}, rng),
                   [](const auto& x) { return linear_head(x[0], x[1], x[2]); },
                   [](const auto& x, const Tensor& u) {
                     auto g = linear_head_backward(x[0], x[1], u);
                     return std::vector<Tensor>{g.dh, g.dweight, g.dbias};
                   });
}

AttentionHeadView head_view_of(const std::vector<Tensor>& x, double p) {
  // x: h, 8 attention params, gamma, beta, weight, bias
  return {view_of(x, 1), x[9], x[10], x[11], x[12], p};
}

Instance attention_head_instance(Rng& rng) {
  const auto t = dim_in(rng, 1, 4), f = dim_in(rng, 2, 4), c = dim_in(rng, 2, 4);
  const auto target = static_cast<std::size_t>(rng.below(c));
  std::vector<Tensor> inputs{random_tensor({t, f}, rng)};
  for (auto& p : attention_params(f, rng)) inputs.push_back(std::move(p));
  inputs.push_back(random_tensor({f}, rng));
  inputs.push_back(random_tensor({f}, rng));
  inputs.push_back(random_tensor({f, c}, rng));
  inputs.push_back(random_tensor({c}, rng));
  Pack pack;
  for (const auto& x : inputs) pack.shapes.push_back(x.shape());
  const Rng mask_rng = rng.split();
  Objective f_obj = [pack, target, mask_rng](std::span<const double> flat) {
    const auto x = pack.unpack(flat);
    const auto view = head_view_of(x, 0.1);
    Rng r = mask_rng;
    const auto fwd = attention_head(x[0], view, r, true);
    const auto loss = ce_loss(fwd.logits, target);
    auto g = attention_head_backward(x[0], view, fwd, loss.grad);
    return ValueAndGradient{
        loss.value,
        Pack::flatten({g.dh, g.attn.dwq, g.attn.dwk, g.attn.dwv, g.attn.dwo, g.attn.dbq, g.attn.dbk,
                       g.attn.dbv, g.attn.dbo, g.dgamma, g.dbeta, g.dweight, g.dbias})};
  };
  return {std::move(f_obj), Pack::flatten(inputs)};
}

// End-to-end: loss(forward(model, sample)) w.r.t. every model parameter, on a
// bank with three heterogeneous layers (two need adapters, one is conv).
Instance probe_instance(Rng& rng, Strategy strategy, HeadKind head) {
  const std::size_t c = dim_in(rng, 2, 3);
  const std::size_t t_max = dim_in(rng, 2, 4), f_max = dim_in(rng, 2, 4);
  std::vector<LayerSpec> layers{
      {"seq_short", LayerKind::sequence, {dim_in(rng, 1, t_max), dim_in(rng, 1, f_max)}},
      {"conv", LayerKind::conv, {1, f_max, t_max}},
      {"seq_last", LayerKind::sequence, {t_max, dim_in(rng, 1, f_max)}}};
  if (rng.below(2) == 0) layers[1].shape = {f_max, 1, t_max};

  const TaskType task = rng.below(2) == 0 ? TaskType::single_label : TaskType::multi_label;
  Rng init = rng.split();
  ProbeModel model = init_probe(layers, strategy, head, c, init, 0.1, task);
  // Move every parameter off its structured init so no gradient is trivially zero.
  for (auto& e : model.params.entries()) {
    for (auto& v : e.value.data()) v = rng.uniform(-1.0, 1.0);
  }
  std::vector<Tensor> sample;
  for (const auto& l : layers) sample.push_back(random_tensor(l.shape, rng));

  LabelSet labels;
  labels.task = task;
  labels.num_classes = c;
  if (task == TaskType::single_label) {
    labels.class_index.push_back(static_cast<std::uint32_t>(rng.below(c)));
  } else {
    for (std::size_t k = 0; k < c; ++k) labels.multi_hot.push_back(static_cast<std::uint8_t>(rng.below(2)));
  }

  const Rng mask_rng = rng.split();
  auto point = model.params.flatten();
  Objective f = [model, sample, labels, mask_rng](std::span<const double> flat) mutable {
    model.params.assign_flat(flat);
    Rng r = mask_rng;
    const ProbeTrace trace = forward_trace(model, sample, r, true);
    const LossResult loss = labels.task == TaskType::single_label
                                ? ce_loss(trace.logits, labels.class_index[0])
                                : bce_loss(trace.logits, labels.targets(0));
    ParamStore grads = model.params.zeros_like();
    backward(model, trace, loss.grad, grads);
    return ValueAndGradient{loss.value, grads.flatten()};
  };
  return {std::move(f), std::move(point)};
}

struct Component {
  const char* name;
  double tolerance;
  std::function<Instance(Rng&)> make;
};

std::vector<Component> components() {
  using S = Strategy;
  using H = HeadKind;
  return {
      {"matmul", kOpGradTolerance, matmul_instance},
      {"affine", kOpGradTolerance, affine_instance},
      {"softmax", kOpGradTolerance, softmax_instance},
      {"softmax_rows", kOpGradTolerance, softmax_rows_instance},
      {"layernorm", kOpGradTolerance, layernorm_instance},
      {"interpolate_time", kOpGradTolerance, interpolate_instance},
      {"mean_rows", kOpGradTolerance, mean_rows_instance},
      {"flatten_conv", kOpGradTolerance, flatten_conv_instance},
      {"dropout", kOpGradTolerance, dropout_instance},
      {"self_attention", kOpGradTolerance, self_attention_instance},
      {"ce_loss", kOpGradTolerance, ce_instance},
      {"bce_loss", kOpGradTolerance, bce_instance},
      {"layernorm_matmul", kOpGradTolerance, layernorm_matmul_instance},
      {"adapt_layer", kOpGradTolerance, adapt_instance},
      {"aggregate_layers", kOpGradTolerance, aggregate_instance},
      {"linear_head", kOpGradTolerance, linear_head_instance},
      {"attention_head", kProbeGradTolerance, attention_head_instance},
      {"probe_last_linear", kProbeGradTolerance,
       [](Rng& r) { return probe_instance(r, S::last, H::linear); }},
      {"probe_last_attention", kProbeGradTolerance,
       [](Rng& r) { return probe_instance(r, S::last, H::attention); }},
      {"probe_all_linear", kProbeGradTolerance,
       [](Rng& r) { return probe_instance(r, S::all, H::linear); }},
      {"probe_all_attention", kProbeGradTolerance,
       [](Rng& r) { return probe_instance(r, S::all, H::attention); }},
  };
}

}  // namespace

std::vector<std::string> gradcheck_components() {
  std::vector<std::string> names;
  for (const auto& c : components()) names.emplace_back(c.name);
  return names;
}

std::vector<ComponentResult> run_gradcheck_suite(const GradcheckOptions& options) {
  std::vector<ComponentResult> results;
  const auto comps = components();
  for (std::size_t ci = 0; ci < comps.size(); ++ci) {
    const Component& comp = comps[ci];
    const bool faulty = options.inject_faults.contains(comp.name);
    Rng rng = Rng::derive(options.seed, ci);
    ComponentResult res{comp.name, 0.0, comp.tolerance, 0};
    for (std::size_t k = 0; k < options.instances; ++k) {
      Instance inst = comp.make(rng);
      Objective f = inst.f;
      if (faulty) {
        f = [inner = inst.f](std::span<const double> x) {
          auto r = inner(x);
          for (auto& g : r.gradient) g = -g;
          return r;
        };
      }
      res.worst_rel_error = std::max(res.worst_rel_error, gradcheck(f, inst.point).max_rel_error);
      ++res.instances;
    }
    results.push_back(res);
  }
  return results;
}

}  // namespace probekit
