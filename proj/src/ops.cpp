#include "probekit/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "probekit/errors.hpp"

namespace probekit {

namespace {

Tensor transpose(const Tensor& a) {
  Tensor t({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Tensor column_sums(const Tensor& m) {
  Tensor s({m.cols()});
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) s[j] += m(i, j);
  return s;
}

void require_vector(const Tensor& v, std::size_t n, const char* where) {
  if (v.rank() != 1 || v.dim(0) != n) {
    throw ShapeError(std::string(where) + ": expected vector of length " + std::to_string(n) +
                     ", got " + shape_to_string(v.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_to_string(a.shape()) + " x " +
                     shape_to_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) c(i, j) += aip * b(p, j);
    }
  }
  require_finite(c, "matmul");
  return c;
}

MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dout) {
  if (dout.rank() != 2 || dout.rows() != a.rows() || dout.cols() != b.cols()) {
    throw ShapeError("matmul_backward: cotangent shape " + shape_to_string(dout.shape()));
  }
  return {matmul(dout, transpose(b)), matmul(transpose(a), dout)};
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank(w, 2, "affine");
  require_vector(b, w.cols(), "affine bias");
  Tensor y = matmul(x, w);
  for (std::size_t i = 0; i < y.rows(); ++i)
    for (std::size_t j = 0; j < y.cols(); ++j) y(i, j) += b[j];
  require_finite(y, "affine");
  return y;
}

AffineGrads affine_backward(const Tensor& x, const Tensor& w, const Tensor& dout) {
  auto [dx, dw] = matmul_backward(x, w, dout);
  return {std::move(dx), std::move(dw), column_sums(dout)};
}

Tensor softmax(const Tensor& v) {
  require_rank(v, 1, "softmax");
  if (v.size() == 0) throw ShapeError("softmax: empty input");
  const double mx = *std::max_element(v.data().begin(), v.data().end());
  Tensor y({v.size()});
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    y[i] = std::exp(v[i] - mx);
    total += y[i];
  }
  for (std::size_t i = 0; i < v.size(); ++i) y[i] /= total;
  require_finite(y, "softmax");
  return y;
}

Tensor softmax_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "softmax_backward");
  const double inner = dot(y, dy);
  Tensor dv({y.size()});
  for (std::size_t i = 0; i < y.size(); ++i) dv[i] = y[i] * (dy[i] - inner);
  return dv;
}

Tensor softmax_rows(const Tensor& s) {
  require_rank(s, 2, "softmax_rows");
  Tensor y(s.shape());
  for (std::size_t r = 0; r < s.rows(); ++r) {
    auto in = s.row(r);
    auto out = y.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double total = 0.0;
    for (std::size_t j = 0; j < in.size(); ++j) {
      out[j] = std::exp(in[j] - mx);
      total += out[j];
    }
    for (auto& o : out) o /= total;
  }
  require_finite(y, "softmax_rows");
  return y;
}

Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy) {
  require_same_shape(y, dy, "softmax_rows_backward");
  Tensor ds(y.shape());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto yr = y.row(r);
    auto dyr = dy.row(r);
    double inner = 0.0;
    for (std::size_t j = 0; j < yr.size(); ++j) inner += yr[j] * dyr[j];
    auto out = ds.row(r);
    for (std::size_t j = 0; j < yr.size(); ++j) out[j] = yr[j] * (dyr[j] - inner);
  }
  return ds;
}

LayerNormResult layernorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require_rank(x, 2, "layernorm");
  const std::size_t f = x.cols();
  require_vector(gamma, f, "layernorm gamma");
  require_vector(beta, f, "layernorm beta");

  LayerNormResult r{Tensor(x.shape()), Tensor(x.shape()), std::vector<double>(x.rows())};
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto row = x.row(t);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(f);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(f);
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    r.inv_std[t] = inv_std;
    for (std::size_t j = 0; j < f; ++j) {
      const double n = (row[j] - mean) * inv_std;
      r.normalized(t, j) = n;
      r.out(t, j) = gamma[j] * n + beta[j];
    }
  }
  require_finite(r.out, "layernorm");
  return r;
}

LayerNormGrads layernorm_backward(const LayerNormResult& fwd, const Tensor& gamma,
                                  const Tensor& dout) {
  require_same_shape(fwd.out, dout, "layernorm_backward");
  const std::size_t rows = dout.rows(), f = dout.cols();
  LayerNormGrads g{Tensor(dout.shape()), Tensor({f}), Tensor({f})};
  std::vector<double> dn(f);
  for (std::size_t t = 0; t < rows; ++t) {
    double sum_dn = 0.0, sum_dn_n = 0.0;
    for (std::size_t j = 0; j < f; ++j) {
      const double n = fwd.normalized(t, j);
      g.dgamma[j] += dout(t, j) * n;
      g.dbeta[j] += dout(t, j);
      dn[j] = dout(t, j) * gamma[j];
      sum_dn += dn[j];
      sum_dn_n += dn[j] * n;
    }
    const double fd = static_cast<double>(f);
    for (std::size_t j = 0; j < f; ++j) {
      g.dx(t, j) = fwd.inv_std[t] *
                   (dn[j] - sum_dn / fd - fwd.normalized(t, j) * sum_dn_n / fd);
    }
  }
  return g;
}

namespace {

// Source coordinate of output row t as (lower index, fractional weight of the
// upper neighbour). Integer arithmetic keeps the identity case exact.
struct Tap {
  std::size_t lo;
  double frac;
};

Tap interpolation_tap(std::size_t t, std::size_t t_in, std::size_t t_out) {
  if (t_in == 1 || t_out == 1) return {0, 0.0};
  const std::size_t num = t * (t_in - 1);
  const std::size_t den = t_out - 1;
  const std::size_t lo = num / den;
  const std::size_t rem = num % den;
  if (lo >= t_in - 1) return {t_in - 1, 0.0};
  return {lo, static_cast<double>(rem) / static_cast<double>(den)};
}

}  // namespace

Tensor interpolate_time(const Tensor& x, std::size_t t_out) {
  require_rank(x, 2, "interpolate_time");
  if (t_out < 1) throw ShapeError("interpolate_time: t_out must be >= 1");
  const std::size_t t_in = x.rows(), f = x.cols();
  Tensor y({t_out, f});
  for (std::size_t t = 0; t < t_out; ++t) {
    const Tap tap = interpolation_tap(t, t_in, t_out);
    for (std::size_t j = 0; j < f; ++j) {
      double v = x(tap.lo, j);
      if (tap.frac != 0.0) v = (1.0 - tap.frac) * v + tap.frac * x(tap.lo + 1, j);
      y(t, j) = v;
    }
  }
  return y;
}

Tensor interpolate_time_backward(const Tensor& dout, std::size_t t_in) {
  require_rank(dout, 2, "interpolate_time_backward");
  if (t_in < 1) throw ShapeError("interpolate_time_backward: t_in must be >= 1");
  const std::size_t t_out = dout.rows(), f = dout.cols();
  Tensor dx({t_in, f});
  for (std::size_t t = 0; t < t_out; ++t) {
    const Tap tap = interpolation_tap(t, t_in, t_out);
    for (std::size_t j = 0; j < f; ++j) {
      if (tap.frac != 0.0) {
        dx(tap.lo, j) += (1.0 - tap.frac) * dout(t, j);
        dx(tap.lo + 1, j) += tap.frac * dout(t, j);
      } else {
        dx(tap.lo, j) += dout(t, j);
      }
    }
  }
  return dx;
}

Tensor mean_rows(const Tensor& x) {
  require_rank(x, 2, "mean_rows");
  Tensor m = column_sums(x);
  m *= 1.0 / static_cast<double>(x.rows());
  return m;
}

Tensor mean_rows_backward(const Tensor& dmean, std::size_t t) {
  require_rank(dmean, 1, "mean_rows_backward");
  Tensor dx({t, dmean.size()});
  const double scale = 1.0 / static_cast<double>(t);
  for (std::size_t r = 0; r < t; ++r)
    for (std::size_t j = 0; j < dmean.size(); ++j) dx(r, j) = dmean[j] * scale;
  return dx;
}

DropoutResult dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: rate must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return {x, Tensor(x.shape(), 1.0)};
  const double keep_scale = 1.0 / (1.0 - p);
  Tensor mask(x.shape());
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = rng.uniform() >= p ? keep_scale : 0.0;
    out[i] = x[i] * mask[i];
  }
  return {std::move(out), std::move(mask)};
}

Tensor dropout_backward(const DropoutResult& fwd, const Tensor& dout) {
  require_same_shape(fwd.mask, dout, "dropout_backward");
  Tensor dx(dout.shape());
  for (std::size_t i = 0; i < dout.size(); ++i) dx[i] = dout[i] * fwd.mask[i];
  return dx;
}

SelfAttentionResult self_attention_forward(const Tensor& x, const AttentionParamsView& p) {
  require_rank(x, 2, "self_attention");
  const std::size_t f = x.cols();
  for (const Tensor* w : {&p.wq, &p.wk, &p.wv, &p.wo}) {
    if (w->rank() != 2 || w->rows() != f || w->cols() != f) {
      throw ShapeError("self_attention: projection must be " + std::to_string(f) + "x" +
                       std::to_string(f) + ", got " + shape_to_string(w->shape()));
    }
  }
  SelfAttentionResult r;
  r.q = affine(x, p.wq, p.bq);
  r.k = affine(x, p.wk, p.bk);
  r.v = affine(x, p.wv, p.bv);
  Tensor scores = matmul(r.q, transpose(r.k));
  scores *= 1.0 / std::sqrt(static_cast<double>(f));
  r.attn = softmax_rows(scores);
  r.context = matmul(r.attn, r.v);
  r.out = affine(r.context, p.wo, p.bo);
  return r;
}

SelfAttentionGrads self_attention_backward(const Tensor& x, const AttentionParamsView& p,
                                           const SelfAttentionResult& fwd,
                                           const Tensor& dout) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  SelfAttentionGrads g;

  auto out_g = affine_backward(fwd.context, p.wo, dout);
  g.dwo = std::move(out_g.dw);
  g.dbo = std::move(out_g.db);

  auto ctx_g = matmul_backward(fwd.attn, fwd.v, out_g.dx);
  Tensor dscores = softmax_rows_backward(fwd.attn, ctx_g.da);
  dscores *= scale;

  // scores = q · kᵀ
  Tensor dq = matmul(dscores, fwd.k);
  Tensor dk = matmul(transpose(dscores), fwd.q);

  auto q_g = affine_backward(x, p.wq, dq);
  auto k_g = affine_backward(x, p.wk, dk);
  auto v_g = affine_backward(x, p.wv, ctx_g.db);

  g.dx = std::move(q_g.dx);
  g.dx += k_g.dx;
  g.dx += v_g.dx;
  g.dwq = std::move(q_g.dw);
  g.dbq = std::move(q_g.db);
  g.dwk = std::move(k_g.dw);
  g.dbk = std::move(k_g.db);
  g.dwv = std::move(v_g.dw);
  g.dbv = std::move(v_g.db);
  return g;
}

}  // namespace probekit
