#pragma once

// Probe heads over frozen-encoder layer activations.
//
//   last: head(flatten(last layer))
//   all:  head(sum_l alpha_l * adapt_l(flatten(layer l))),  alpha = softmax(w)
//
// Adapters (linear feature projection, then linear time interpolation to
// T_max) exist only for layers whose (time, feature) shape differs from
// (T_max, F_max). Heads:
//   linear:    mean over time, affine to C logits
//   attention: Y = self_attention(h); Z = layernorm(h + dropout(Y));
//              logits = dropout(mean_t Z) W + b

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "probekit/bank.hpp"
#include "probekit/ops.hpp"
#include "probekit/params.hpp"
#include "probekit/rng.hpp"

namespace probekit {

enum class Strategy { last, all };
enum class HeadKind { linear, attention };

std::string to_string(Strategy s);
std::string to_string(HeadKind h);
Strategy parse_strategy(const std::string& s);
HeadKind parse_head(const std::string& s);

// conv [d1 x d2 x d3] -> [d3 x d1*d2]; time is the width axis, features are
// channel-major, height-minor.
Tensor flatten_conv(const Tensor& x);
Tensor flatten_conv_backward(const Tensor& dout, const Shape& conv_shape);
// Flattens conv layers, passes sequence layers through.
Tensor as_sequence(const Tensor& x, const LayerSpec& spec);

// Identity when `weight` is null (the input must already be [t_max x f]).
Tensor adapt_layer(const Tensor& h, const Tensor* weight, const Tensor* bias, std::size_t t_max);

struct AggregateResult {
  Tensor alpha;
  Tensor out;
};
AggregateResult aggregate_layers(const std::vector<Tensor>& adapted, const Tensor& scores);
struct AggregateGrads {
  std::vector<Tensor> dadapted;
  Tensor dscores;
};
AggregateGrads aggregate_layers_backward(const std::vector<Tensor>& adapted,
                                         const AggregateResult& fwd, const Tensor& dout);

Tensor linear_head(const Tensor& h, const Tensor& weight, const Tensor& bias);
struct LinearHeadGrads {
  Tensor dh;
  Tensor dweight;
  Tensor dbias;
};
LinearHeadGrads linear_head_backward(const Tensor& h, const Tensor& weight, const Tensor& dlogits);

struct AttentionHeadView {
  AttentionParamsView attn;
  const Tensor& gamma;
  const Tensor& beta;
  const Tensor& weight;
  const Tensor& bias;
  double dropout_p;
};

struct AttentionHeadResult {
  SelfAttentionResult attn;
  DropoutResult drop_attn;
  LayerNormResult norm;
  Tensor pooled;
  DropoutResult drop_pooled;
  Tensor logits;
};

// Dropout masks are drawn from rng in order: attention output, then pooled vector.
AttentionHeadResult attention_head(const Tensor& h, const AttentionHeadView& p, Rng& rng,
                                   bool training);

struct AttentionHeadGrads {
  Tensor dh;
  SelfAttentionGrads attn;
  Tensor dgamma, dbeta, dweight, dbias;
};
AttentionHeadGrads attention_head_backward(const Tensor& h, const AttentionHeadView& p,
                                           const AttentionHeadResult& fwd, const Tensor& dlogits);

// Shape-level description of a probe: enough to count or allocate parameters.
struct ProbeArchitecture {
  Strategy strategy = Strategy::last;
  HeadKind head = HeadKind::linear;
  std::vector<LayerSpec> layers;  // every layer of the bank, in order
  std::size_t num_classes = 0;
  std::size_t t_max = 0;
  std::size_t f_max = 0;
  std::vector<bool> adapted;  // per layer; empty for strategy=last

  std::vector<std::size_t> used_layers() const;
  // Parameter names and shapes in canonical order.
  std::vector<std::pair<std::string, Shape>> parameter_shapes() const;

  bool operator==(const ProbeArchitecture&) const = default;
};

ProbeArchitecture plan_probe(const std::vector<LayerSpec>& layers, Strategy strategy,
                             HeadKind head, std::size_t num_classes);

std::size_t count_parameters(const ProbeArchitecture& arch);

std::string adapter_weight_name(std::size_t layer);
std::string adapter_bias_name(std::size_t layer);
inline constexpr const char* kLayerWeightsName = "layer_weights";

struct ProbeModel {
  ProbeArchitecture arch;
  ParamStore params;
  double dropout_p = 0.1;
  TaskType task = TaskType::single_label;  // objective the model is trained for

  bool operator==(const ProbeModel&) const = default;
};

// Weights ~ Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) in canonical order,
// biases and layer scores 0, layernorm gamma 1 and beta 0.
ProbeModel init_probe(const std::vector<LayerSpec>& layers, Strategy strategy, HeadKind head,
                      std::size_t num_classes, Rng& rng, double dropout_p = 0.1,
                      TaskType task = TaskType::single_label);

std::size_t count_parameters(const ProbeModel& model);

// alpha = softmax(layer scores); nullopt for strategy=last.
std::optional<Tensor> layer_alphas(const ProbeModel& model);

struct ProbeTrace {
  std::vector<Tensor> inputs;   // per used layer, flattened to [t x f]
  std::vector<Tensor> adapted;  // per used layer, [t_max x f_max]
  std::optional<AggregateResult> aggregate;
  Tensor h;
  std::optional<AttentionHeadResult> attention;
  Tensor logits;
};

// sample_layers[l] holds every bank layer of one sample in its stored shape.
ProbeTrace forward_trace(const ProbeModel& model, const std::vector<Tensor>& sample_layers,
                         Rng& rng, bool training);
inline Tensor forward(const ProbeModel& model, const std::vector<Tensor>& sample_layers, Rng& rng,
                      bool training) {
  return forward_trace(model, sample_layers, rng, training).logits;
}
// Eval-mode forward; draws nothing from any rng.
Tensor forward_eval(const ProbeModel& model, const std::vector<Tensor>& sample_layers);

// grads += scale * d(loss)/d(params) given d(loss)/d(logits).
void backward(const ProbeModel& model, const ProbeTrace& trace, const Tensor& dlogits,
              ParamStore& grads, double scale = 1.0);

nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& j, const Shape& shape);

nlohmann::json to_json(const ProbeModel& model);
ProbeModel probe_from_json(const nlohmann::json& j);

}  // namespace probekit
