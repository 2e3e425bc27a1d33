#include "probekit/probe.hpp"

#include <algorithm>
#include <cmath>

#include "probekit/errors.hpp"

namespace probekit {

using nlohmann::json;

std::string to_string(Strategy s) { return s == Strategy::all ? "all" : "last"; }
std::string to_string(HeadKind h) { return h == HeadKind::attention ? "attention" : "linear"; }

Strategy parse_strategy(const std::string& s) {
  if (s == "last") return Strategy::last;
  if (s == "all") return Strategy::all;
  throw ConfigError("unknown strategy '" + s + "' (expected last|all)");
}

HeadKind parse_head(const std::string& s) {
  if (s == "linear") return HeadKind::linear;
  if (s == "attention") return HeadKind::attention;
  throw ConfigError("unknown head '" + s + "' (expected linear|attention)");
}

Tensor flatten_conv(const Tensor& x) {
  if (x.rank() != 3) {
    throw ShapeError("flatten_conv: expected (channel, height, width), got " +
                     shape_to_string(x.shape()));
  }
  const std::size_t ch = x.dim(0), height = x.dim(1), width = x.dim(2);
  Tensor out({width, ch * height});
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t w = 0; w < width; ++w) out(w, c * height + h) = x[(c * height + h) * width + w];
  return out;
}

Tensor flatten_conv_backward(const Tensor& dout, const Shape& conv_shape) {
  const std::size_t ch = conv_shape.at(0), height = conv_shape.at(1), width = conv_shape.at(2);
  if (dout.rank() != 2 || dout.rows() != width || dout.cols() != ch * height) {
    throw ShapeError("flatten_conv_backward: cotangent shape " + shape_to_string(dout.shape()));
  }
  Tensor dx(conv_shape);
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t h = 0; h < height; ++h)
      for (std::size_t w = 0; w < width; ++w) dx[(c * height + h) * width + w] = dout(w, c * height + h);
  return dx;
}

Tensor as_sequence(const Tensor& x, const LayerSpec& spec) {
  if (x.shape() != spec.shape) {
    throw ShapeError("layer '" + spec.name + "': got " + shape_to_string(x.shape()) +
                     ", registered " + shape_to_string(spec.shape));
  }
  return spec.kind == LayerKind::conv ? flatten_conv(x) : x;
}

Tensor adapt_layer(const Tensor& h, const Tensor* weight, const Tensor* bias, std::size_t t_max) {
  require_rank(h, 2, "adapt_layer");
  if (weight == nullptr) {
    if (h.rows() != t_max) {
      throw ShapeError("adapt_layer: unadapted layer has " + std::to_string(h.rows()) +
                       " steps, expected " + std::to_string(t_max));
    }
    return h;
  }
  if (bias == nullptr) throw ShapeError("adapt_layer: projection without bias");
  if (weight->rows() != h.cols()) {
    throw ShapeError("adapt_layer: features " + std::to_string(h.cols()) +
                     " do not match projection " + shape_to_string(weight->shape()));
  }
  return interpolate_time(affine(h, *weight, *bias), t_max);
}

AggregateResult aggregate_layers(const std::vector<Tensor>& adapted, const Tensor& scores) {
  if (adapted.empty()) throw ShapeError("aggregate_layers: no layers");
  if (scores.rank() != 1 || scores.size() != adapted.size()) {
    throw ShapeError("aggregate_layers: " + std::to_string(adapted.size()) + " layers but scores " +
                     shape_to_string(scores.shape()));
  }
  AggregateResult r{softmax(scores), Tensor(adapted.front().shape())};
  for (std::size_t l = 0; l < adapted.size(); ++l) {
    require_same_shape(adapted[l], adapted.front(), "aggregate_layers");
    const auto src = adapted[l].data();
    auto dst = r.out.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += r.alpha[l] * src[k];
  }
  return r;
}

AggregateGrads aggregate_layers_backward(const std::vector<Tensor>& adapted,
                                         const AggregateResult& fwd, const Tensor& dout) {
  AggregateGrads g;
  Tensor dalpha({adapted.size()});
  for (std::size_t l = 0; l < adapted.size(); ++l) {
    dalpha[l] = dot(adapted[l], dout);
    g.dadapted.push_back(fwd.alpha[l] * dout);
  }
  g.dscores = softmax_backward(fwd.alpha, dalpha);
  return g;
}

Tensor linear_head(const Tensor& h, const Tensor& weight, const Tensor& bias) {
  require_rank(h, 2, "linear_head");
  const Tensor pooled = mean_rows(h).reshaped({1, h.cols()});
  return affine(pooled, weight, bias).reshaped({weight.cols()});
}

LinearHeadGrads linear_head_backward(const Tensor& h, const Tensor& weight, const Tensor& dlogits) {
  const Tensor pooled = mean_rows(h).reshaped({1, h.cols()});
  auto g = affine_backward(pooled, weight, dlogits.reshaped({1, dlogits.size()}));
  return {mean_rows_backward(g.dx.reshaped({h.cols()}), h.rows()), std::move(g.dw),
          std::move(g.db)};
}

AttentionHeadResult attention_head(const Tensor& h, const AttentionHeadView& p, Rng& rng,
                                   bool training) {
  require_rank(h, 2, "attention_head");
  AttentionHeadResult r;
  r.attn = self_attention_forward(h, p.attn);
  r.drop_attn = dropout(r.attn.out, p.dropout_p, rng, training);
  r.norm = layernorm_forward(h + r.drop_attn.out, p.gamma, p.beta);
  r.pooled = mean_rows(r.norm.out);
  r.drop_pooled = dropout(r.pooled, p.dropout_p, rng, training);
  r.logits = affine(r.drop_pooled.out.reshaped({1, h.cols()}), p.weight, p.bias)
                 .reshaped({p.weight.cols()});
  return r;
}

AttentionHeadGrads attention_head_backward(const Tensor& h, const AttentionHeadView& p,
                                           const AttentionHeadResult& fwd, const Tensor& dlogits) {
  AttentionHeadGrads g;
  const std::size_t f = h.cols();
  auto cls = affine_backward(fwd.drop_pooled.out.reshaped({1, f}), p.weight,
                             dlogits.reshaped({1, dlogits.size()}));
  g.dweight = std::move(cls.dw);
  g.dbias = std::move(cls.db);
  const Tensor dpooled = dropout_backward(fwd.drop_pooled, cls.dx.reshaped({f}));
  const Tensor dz = mean_rows_backward(dpooled, h.rows());
  auto ln = layernorm_backward(fwd.norm, p.gamma, dz);
  g.dgamma = std::move(ln.dgamma);
  g.dbeta = std::move(ln.dbeta);
  // Residual: d(h + dropout(Y)) flows to h directly and through attention.
  const Tensor dy = dropout_backward(fwd.drop_attn, ln.dx);
  g.attn = self_attention_backward(h, p.attn, fwd.attn, dy);
  g.dh = ln.dx + g.attn.dx;
  return g;
}

std::vector<std::size_t> ProbeArchitecture::used_layers() const {
  if (strategy == Strategy::last) return {layers.size() - 1};
  std::vector<std::size_t> all(layers.size());
  for (std::size_t l = 0; l < all.size(); ++l) all[l] = l;
  return all;
}

std::string adapter_weight_name(std::size_t layer) {
  return "adapter." + std::to_string(layer) + ".weight";
}
std::string adapter_bias_name(std::size_t layer) {
  return "adapter." + std::to_string(layer) + ".bias";
}

std::vector<std::pair<std::string, Shape>> ProbeArchitecture::parameter_shapes() const {
  std::vector<std::pair<std::string, Shape>> out;
  const std::size_t f = f_max, c = num_classes;
  if (strategy == Strategy::all) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (!adapted[l]) continue;
      out.emplace_back(adapter_weight_name(l), Shape{layers[l].feature_dim(), f});
      out.emplace_back(adapter_bias_name(l), Shape{f});
    }
    out.emplace_back(kLayerWeightsName, Shape{layers.size()});
  }
  if (head == HeadKind::attention) {
    for (const char* proj : {"q", "k", "v", "o"}) {
      out.emplace_back(std::string("attn.w") + proj, Shape{f, f});
      out.emplace_back(std::string("attn.b") + proj, Shape{f});
    }
    out.emplace_back("norm.gamma", Shape{f});
    out.emplace_back("norm.beta", Shape{f});
  }
  out.emplace_back("head.weight", Shape{f, c});
  out.emplace_back("head.bias", Shape{c});
  return out;
}

ProbeArchitecture plan_probe(const std::vector<LayerSpec>& layers, Strategy strategy,
                             HeadKind head, std::size_t num_classes) {
  if (layers.empty()) throw ConfigError("probe needs at least one layer");
  if (num_classes < 2) throw ConfigError("probe needs at least two classes");
  for (const auto& l : layers) validate_layer_spec(l);

  ProbeArchitecture a;
  a.strategy = strategy;
  a.head = head;
  a.layers = layers;
  a.num_classes = num_classes;
  for (std::size_t l : a.used_layers()) {
    a.t_max = std::max(a.t_max, layers[l].time_dim());
    a.f_max = std::max(a.f_max, layers[l].feature_dim());
  }
  if (strategy == Strategy::all) {
    for (const auto& l : layers) a.adapted.push_back(l.time_dim() != a.t_max || l.feature_dim() != a.f_max);
  }
  return a;
}

std::size_t count_parameters(const ProbeArchitecture& arch) {
  std::size_t n = 0;
  for (const auto& [name, shape] : arch.parameter_shapes()) n += shape_size(shape);
  return n;
}

std::size_t count_parameters(const ProbeModel& model) { return model.params.scalar_count(); }

ProbeModel init_probe(const std::vector<LayerSpec>& layers, Strategy strategy, HeadKind head,
                      std::size_t num_classes, Rng& rng, double dropout_p, TaskType task) {
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("dropout_p must lie in [0, 1)");
  ProbeModel m;
  m.arch = plan_probe(layers, strategy, head, num_classes);
  m.dropout_p = dropout_p;
  m.task = task;
  for (auto& [name, shape] : m.arch.parameter_shapes()) {
    Tensor t(shape);
    if (shape.size() == 2) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(shape[0]));
      for (auto& v : t.data()) v = rng.uniform(-bound, bound);
    } else if (name == "norm.gamma") {
      t.fill(1.0);
    }
    m.params.add(name, std::move(t));
  }
  return m;
}

std::optional<Tensor> layer_alphas(const ProbeModel& model) {
  if (model.arch.strategy != Strategy::all) return std::nullopt;
  return softmax(model.params.at(kLayerWeightsName));
}

namespace {

AttentionHeadView head_view(const ProbeModel& m) {
  const ParamStore& p = m.params;
  return AttentionHeadView{
      AttentionParamsView{p.at("attn.wq"), p.at("attn.wk"), p.at("attn.wv"), p.at("attn.wo"),
                          p.at("attn.bq"), p.at("attn.bk"), p.at("attn.bv"), p.at("attn.bo")},
      p.at("norm.gamma"), p.at("norm.beta"), p.at("head.weight"), p.at("head.bias"), m.dropout_p};
}

void accumulate(ParamStore& grads, std::string_view name, const Tensor& g, double scale) {
  Tensor& dst = grads.at(name);
  require_same_shape(dst, g, name);
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += scale * g[k];
}

}  // namespace

ProbeTrace forward_trace(const ProbeModel& model, const std::vector<Tensor>& sample_layers,
                         Rng& rng, bool training) {
  const ProbeArchitecture& a = model.arch;
  if (sample_layers.size() != a.layers.size()) {
    throw ShapeError("forward: sample has " + std::to_string(sample_layers.size()) +
                     " layers, model expects " + std::to_string(a.layers.size()));
  }
  ProbeTrace tr;
  for (std::size_t l : a.used_layers()) tr.inputs.push_back(as_sequence(sample_layers[l], a.layers[l]));

  if (a.strategy == Strategy::last) {
    tr.h = tr.inputs.front();
  } else {
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
      if (a.adapted[l]) {
        tr.adapted.push_back(adapt_layer(tr.inputs[l], &model.params.at(adapter_weight_name(l)),
                                         &model.params.at(adapter_bias_name(l)), a.t_max));
      } else {
        tr.adapted.push_back(adapt_layer(tr.inputs[l], nullptr, nullptr, a.t_max));
      }
    }
    tr.aggregate = aggregate_layers(tr.adapted, model.params.at(kLayerWeightsName));
    tr.h = tr.aggregate->out;
  }

  if (a.head == HeadKind::linear) {
    tr.logits = linear_head(tr.h, model.params.at("head.weight"), model.params.at("head.bias"));
  } else {
    tr.attention = attention_head(tr.h, head_view(model), rng, training);
    tr.logits = tr.attention->logits;
  }
  return tr;
}

Tensor forward_eval(const ProbeModel& model, const std::vector<Tensor>& sample_layers) {
  Rng unused(0);
  return forward_trace(model, sample_layers, unused, false).logits;
}

void backward(const ProbeModel& model, const ProbeTrace& trace, const Tensor& dlogits,
              ParamStore& grads, double scale) {
  const ProbeArchitecture& a = model.arch;
  if (dlogits.rank() != 1 || dlogits.size() != a.num_classes) {
    throw ShapeError("backward: logit cotangent shape " + shape_to_string(dlogits.shape()));
  }

  Tensor dh;
  if (a.head == HeadKind::linear) {
    auto g = linear_head_backward(trace.h, model.params.at("head.weight"), dlogits);
    accumulate(grads, "head.weight", g.dweight, scale);
    accumulate(grads, "head.bias", g.dbias, scale);
    dh = std::move(g.dh);
  } else {
    auto g = attention_head_backward(trace.h, head_view(model), *trace.attention, dlogits);
    accumulate(grads, "attn.wq", g.attn.dwq, scale);
    accumulate(grads, "attn.bq", g.attn.dbq, scale);
    accumulate(grads, "attn.wk", g.attn.dwk, scale);
    accumulate(grads, "attn.bk", g.attn.dbk, scale);
    accumulate(grads, "attn.wv", g.attn.dwv, scale);
    accumulate(grads, "attn.bv", g.attn.dbv, scale);
    accumulate(grads, "attn.wo", g.attn.dwo, scale);
    accumulate(grads, "attn.bo", g.attn.dbo, scale);
    accumulate(grads, "norm.gamma", g.dgamma, scale);
    accumulate(grads, "norm.beta", g.dbeta, scale);
    accumulate(grads, "head.weight", g.dweight, scale);
    accumulate(grads, "head.bias", g.dbias, scale);
    dh = std::move(g.dh);
  }

  if (a.strategy == Strategy::last) return;

  auto agg = aggregate_layers_backward(trace.adapted, *trace.aggregate, dh);
  accumulate(grads, kLayerWeightsName, agg.dscores, scale);
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    if (!a.adapted[l]) continue;
    const Tensor dproj = interpolate_time_backward(agg.dadapted[l], trace.inputs[l].rows());
    auto g = affine_backward(trace.inputs[l], model.params.at(adapter_weight_name(l)), dproj);
    accumulate(grads, adapter_weight_name(l), g.dw, scale);
    accumulate(grads, adapter_bias_name(l), g.db, scale);
  }
}

namespace {

json nested(std::span<const double> data, const Shape& shape, std::size_t axis) {
  json arr = json::array();
  if (axis + 1 == shape.size()) {
    for (double v : data) arr.push_back(v);
    return arr;
  }
  const std::size_t stride = data.size() / shape[axis];
  for (std::size_t i = 0; i < shape[axis]; ++i) {
    arr.push_back(nested(data.subspan(i * stride, stride), shape, axis + 1));
  }
  return arr;
}

void unnest(const json& j, const Shape& shape, std::size_t axis, std::vector<double>& out) {
  if (!j.is_array() || j.size() != shape[axis]) {
    throw CheckpointError("tensor array does not match shape " + shape_to_string(shape));
  }
  for (const auto& e : j) {
    if (axis + 1 == shape.size()) {
      if (!e.is_number()) throw CheckpointError("tensor element is not a number");
      out.push_back(e.get<double>());
    } else {
      unnest(e, shape, axis + 1, out);
    }
  }
}

}  // namespace

json tensor_to_json(const Tensor& t) { return nested(t.data(), t.shape(), 0); }

Tensor tensor_from_json(const json& j, const Shape& shape) {
  std::vector<double> data;
  data.reserve(shape_size(shape));
  unnest(j, shape, 0, data);
  Tensor t(shape, std::move(data));
  require_finite(t, "checkpoint tensor");
  return t;
}

json to_json(const ProbeModel& model) {
  const ProbeArchitecture& a = model.arch;
  json layers = json::array();
  for (const auto& l : a.layers) layers.push_back(to_json(l));
  json params = json::object();
  for (const auto& e : model.params.entries()) params[e.name] = tensor_to_json(e.value);
  return json{{"strategy", to_string(a.strategy)},
              {"head", to_string(a.head)},
              {"num_classes", a.num_classes},
              {"t_max", a.t_max},
              {"f_max", a.f_max},
              {"dropout_p", model.dropout_p},
              {"task", to_string(model.task)},
              {"layers", layers},
              {"adapted", a.adapted},
              {"params", params}};
}

ProbeModel probe_from_json(const json& j) {
  try {
    std::vector<LayerSpec> layers;
    for (const auto& l : j.at("layers")) layers.push_back(layer_spec_from_json(l));
    ProbeModel m;
    m.arch = plan_probe(layers, parse_strategy(j.at("strategy").get<std::string>()),
                        parse_head(j.at("head").get<std::string>()),
                        j.at("num_classes").get<std::size_t>());
    if (j.at("t_max").get<std::size_t>() != m.arch.t_max ||
        j.at("f_max").get<std::size_t>() != m.arch.f_max ||
        j.at("adapted").get<std::vector<bool>>() != m.arch.adapted) {
      throw CheckpointError("model dims disagree with its layer specs");
    }
    m.dropout_p = j.at("dropout_p").get<double>();
    m.task = parse_task_type(j.at("task").get<std::string>());
    const json& params = j.at("params");
    for (const auto& [name, shape] : m.arch.parameter_shapes()) {
      if (!params.contains(name)) throw CheckpointError("missing parameter '" + name + "'");
      m.params.add(name, tensor_from_json(params.at(name), shape));
    }
    if (params.size() != m.params.size()) throw CheckpointError("unexpected extra parameters");
    return m;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("model: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("model: ") + e.what());
  }
}

}  // namespace probekit
