#pragma once

// Forward and backward passes for every dense operation the probes use.
// Backward functions take whatever the forward produced (or its inputs) plus
// the cotangent of the output, and return cotangents of the inputs.

#include <cstddef>
#include <vector>

#include "probekit/rng.hpp"
#include "probekit/tensor.hpp"

namespace probekit {

// [m×k] · [k×n] -> [m×n]
Tensor matmul(const Tensor& a, const Tensor& b);
struct MatmulGrads {
  Tensor da;
  Tensor db;
};
MatmulGrads matmul_backward(const Tensor& a, const Tensor& b, const Tensor& dout);

// Row-wise affine map x·W + b with x [T×I], W [I×O], b [O].
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
struct AffineGrads {
  Tensor dx;
  Tensor dw;
  Tensor db;
};
AffineGrads affine_backward(const Tensor& x, const Tensor& w, const Tensor& dout);

// Max-subtracted softmax over a vector; backward takes the forward output.
Tensor softmax(const Tensor& v);
Tensor softmax_backward(const Tensor& y, const Tensor& dy);

// Softmax applied independently to every row of a matrix.
Tensor softmax_rows(const Tensor& s);
Tensor softmax_rows_backward(const Tensor& y, const Tensor& dy);

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormResult {
  Tensor out;
  Tensor normalized;            // (x - mean) * inv_std, before the affine
  std::vector<double> inv_std;  // one per row
};
LayerNormResult layernorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta);
inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  return layernorm_forward(x, gamma, beta).out;
}
struct LayerNormGrads {
  Tensor dx;
  Tensor dgamma;
  Tensor dbeta;
};
LayerNormGrads layernorm_backward(const LayerNormResult& fwd, const Tensor& gamma,
                                  const Tensor& dout);

// Piecewise-linear resampling along axis 0 with endpoint alignment.
Tensor interpolate_time(const Tensor& x, std::size_t t_out);
// Transpose of the interpolation map, back to t_in rows.
Tensor interpolate_time_backward(const Tensor& dout, std::size_t t_in);

// [T×F] -> [F]
Tensor mean_rows(const Tensor& x);
Tensor mean_rows_backward(const Tensor& dmean, std::size_t t);

struct DropoutResult {
  Tensor out;
  Tensor mask;  // 0 for dropped entries, 1/(1-p) for survivors
};
// Inverted dropout. Identity (and no rng draws) in eval mode or when p == 0.
DropoutResult dropout(const Tensor& x, double p, Rng& rng, bool training);
Tensor dropout_backward(const DropoutResult& fwd, const Tensor& dout);

struct AttentionParamsView {
  const Tensor& wq;
  const Tensor& wk;
  const Tensor& wv;
  const Tensor& wo;
  const Tensor& bq;
  const Tensor& bk;
  const Tensor& bv;
  const Tensor& bo;
};

struct SelfAttentionResult {
  Tensor q, k, v;
  Tensor attn;     // [T×T], rows sum to 1
  Tensor context;  // attn · v
  Tensor out;
};

// Single-head scaled dot-product self-attention over the rows of x [T×F].
SelfAttentionResult self_attention_forward(const Tensor& x, const AttentionParamsView& p);
inline Tensor self_attention(const Tensor& x, const AttentionParamsView& p) {
  return self_attention_forward(x, p).out;
}

struct SelfAttentionGrads {
  Tensor dx;
  Tensor dwq, dwk, dwv, dwo;
  Tensor dbq, dbk, dbv, dbo;
};
SelfAttentionGrads self_attention_backward(const Tensor& x, const AttentionParamsView& p,
                                           const SelfAttentionResult& fwd,
                                           const Tensor& dout);

}  // namespace probekit
