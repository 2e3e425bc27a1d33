#include "probekit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "probekit/errors.hpp"
#include "probekit/train.hpp"

namespace probekit {

using nlohmann::json;

namespace {

// Double-double accumulator so that short sums of rationals like (1 + 2/3) / 2
// round to the nearest double instead of drifting by an ulp.
struct ExactSum {
  double hi = 0.0, lo = 0.0;

  void add(double x) {
    const double s = hi + x;
    const double bp = s - hi;
    const double err = (hi - (s - bp)) + (x - bp);
    hi = s;
    lo += err;
  }

  // Adds a / b carrying the rounding residual of the quotient.
  void add_ratio(double a, double b) {
    const double q = a / b;
    add(q);
    lo += std::fma(-q, b, a) / b;
  }

  double divided_by(double d) const {
    const double q = hi / d;
    const double r = std::fma(-q, d, hi) + lo;
    return q + r / d;
  }
};

}  // namespace

double top1_accuracy(const Tensor& logits, std::span<const std::uint32_t> labels) {
  require_rank(logits, 2, "top1_accuracy");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) throw ShapeError("top1_accuracy: label count differs from rows");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) {
      throw ConfigError("top1_accuracy: label " + std::to_string(labels[i]) + " out of range");
    }
    const auto row = logits.row(i);
    // max_element returns the first maximum, i.e. the lowest tied index.
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    if (best == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positives) {
  if (scores.size() != positives.size()) throw ShapeError("average_precision: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  ExactSum sum;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (positives[order[rank]]) {
      ++hits;
      sum.add_ratio(static_cast<double>(hits), static_cast<double>(rank + 1));
    }
  }
  if (hits == 0) throw ConfigError("average_precision: no positives");
  return sum.divided_by(static_cast<double>(hits));
}

EvalReport macro_map(const Tensor& scores, const Tensor& targets) {
  require_rank(scores, 2, "macro_map");
  require_same_shape(scores, targets, "macro_map");
  const std::size_t n = scores.rows(), c = scores.cols();
  EvalReport r;
  r.task = TaskType::multi_label;
  r.metric = "macro_map";
  r.num_samples = n;
  ExactSum total;
  std::size_t scored = 0;
  std::vector<double> col(n);
  std::vector<std::uint8_t> pos(n);
  for (std::size_t k = 0; k < c; ++k) {
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = scores(i, k);
      const double t = targets(i, k);
      if (t != 0.0 && t != 1.0) throw ConfigError("macro_map: targets must be 0 or 1");
      pos[i] = t == 1.0;
      any = any || pos[i];
    }
    if (!any) {
      r.per_class_ap.push_back(std::nullopt);
      r.excluded_classes.push_back(k);
      continue;
    }
    const double ap = average_precision(col, pos);
    r.per_class_ap.push_back(ap);
    total.add(ap);
    ++scored;
  }
  if (scored == 0) throw ConfigError("macro_map: no class has a positive sample");
  r.value = total.divided_by(static_cast<double>(scored));
  return r;
}

EvalReport evaluate(const Dataset& data, const ProbeModel& model) {
  require_compatible(model, data.manifest);
  const std::size_t n = data.size(), c = model.arch.num_classes;
  Tensor logits({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor z = forward_eval(model, data.samples[i]);
    std::copy(z.data().begin(), z.data().end(), logits.row(i).begin());
  }

  EvalReport r;
  if (data.manifest.task == TaskType::single_label) {
    r.task = TaskType::single_label;
    r.metric = "top1_acc";
    r.value = top1_accuracy(logits, data.labels.class_index);
    r.num_samples = n;
  } else {
    Tensor targets({n, c});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < c; ++k) targets(i, k) = data.labels.multi_hot[i * c + k];
    }
    r = macro_map(logits, targets);
  }
  if (auto alpha = layer_alphas(model)) {
    r.layer_weights = std::vector<double>(alpha->data().begin(), alpha->data().end());
  }
  return r;
}

EvalReport evaluate(const EmbeddingBank& bank, const ProbeModel& model) {
  return evaluate(Dataset::load(bank), model);
}

json to_json(const EvalReport& report) {
  json j{{"task", to_string(report.task)},
         {"metric", report.metric},
         {"value", report.value},
         {"num_samples", report.num_samples}};
  if (report.task == TaskType::multi_label) {
    json ap = json::array();
    for (const auto& v : report.per_class_ap) ap.push_back(v ? json(*v) : json(nullptr));
    j["per_class_ap"] = ap;
    j["excluded_classes"] = report.excluded_classes;
  }
  if (report.layer_weights) j["layer_weights"] = *report.layer_weights;
  return j;
}

}  // namespace probekit
