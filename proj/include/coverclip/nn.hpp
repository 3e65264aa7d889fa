#pragma once

// Transformer building blocks on top of the tensor ops: linear layers,
// layer norm with learned affine, multi-head attention, pre-norm blocks.

#include <cmath>
#include <string>
#include <vector>

#include "coverclip/tensor.hpp"

namespace coverclip {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

constexpr double kInitStd = 0.02;

inline void collect_param(ParamList& out, const std::string& name, const Tensor& t) {
  out.push_back({name, t});
}

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out] (undefined when bias-free)

  Linear() = default;
  Linear(int in, int out, Rng& rng, bool with_bias = true) {
    weight = Tensor::randn({in, out}, rng, kInitStd).set_requires_grad(true);
    if (with_bias) bias = Tensor::zeros({out}).set_requires_grad(true);
  }

  Tensor forward(const Tensor& x) const { return affine(x, weight, bias); }

  void collect(const std::string& prefix, ParamList& out) const {
    collect_param(out, prefix + ".weight", weight);
    if (bias.defined()) collect_param(out, prefix + ".bias", bias);
  }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(int d) {
    gamma = Tensor::full({d}, 1.0).set_requires_grad(true);
    beta = Tensor::zeros({d}).set_requires_grad(true);
  }

  Tensor forward(const Tensor& x) const { return layernorm(x, gamma, beta, eps); }

  void collect(const std::string& prefix, ParamList& out) const {
    collect_param(out, prefix + ".gamma", gamma);
    collect_param(out, prefix + ".beta", beta);
  }
};

// Scaled dot-product attention over already-projected q/k/v, per head,
// concatenated. No output projection here; MultiHeadAttention adds it.
inline Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                             const std::vector<std::uint8_t>* key_valid = nullptr) {
  if (q.ndim() != 3 || k.ndim() != 3 || v.ndim() != 3)
    throw ShapeError("attention_core: expects [b,L,d] inputs");
  if (q.dim(0) != k.dim(0) || k.shape() != v.shape() || q.dim(2) != k.dim(2))
    throw ShapeError("attention_core: q " + shape_str(q.shape()) + " vs kv " +
                     shape_str(k.shape()));
  const int b = q.dim(0);
  const int d = q.dim(2);
  if (d % heads != 0)
    throw ConfigError("attention_core: d_model " + std::to_string(d) +
                      " not divisible by heads " + std::to_string(heads));
  const int dh = d / heads;
  Tensor qh = split_heads(q, heads);
  Tensor kh = split_heads(k, heads);
  Tensor vh = split_heads(v, heads);
  Tensor scores = bmm(qh, kh, /*trans_b=*/true, 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor attn;
  if (key_valid != nullptr)
    attn = masked_softmax_scores(scores, *key_valid, b, heads);
  else
    attn = softmax_lastdim(scores);
  Tensor ctx = bmm(attn, vh);
  return merge_heads(ctx, heads);
}

struct MultiHeadAttention {
  int heads = 1;
  Linear wq, wk, wv, wo;

  MultiHeadAttention() = default;
  MultiHeadAttention(int d_model, int n_heads, Rng& rng) : heads(n_heads) {
    if (d_model % n_heads != 0)
      throw ConfigError("attention: d_model " + std::to_string(d_model) +
                        " not divisible by heads " + std::to_string(n_heads));
    wq = Linear(d_model, d_model, rng);
    wk = Linear(d_model, d_model, rng);
    wv = Linear(d_model, d_model, rng);
    wo = Linear(d_model, d_model, rng);
  }

  // q_in: [b,Lq,d]; kv_in: [b,Lk,d]; key_valid: optional [b,Lk] padding mask.
  Tensor forward(const Tensor& q_in, const Tensor& kv_in,
                 const std::vector<std::uint8_t>* key_valid = nullptr) const {
    Tensor core = attention_core(wq.forward(q_in), wk.forward(kv_in), wv.forward(kv_in), heads,
                                 key_valid);
    return wo.forward(core);
  }

  void collect(const std::string& prefix, ParamList& out) const {
    wq.collect(prefix + ".wq", out);
    wk.collect(prefix + ".wk", out);
    wv.collect(prefix + ".wv", out);
    wo.collect(prefix + ".wo", out);
  }
};

struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(int d_model, int hidden, Rng& rng) : fc1(d_model, hidden, rng), fc2(hidden, d_model, rng) {}

  Tensor forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }

  void collect(const std::string& prefix, ParamList& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

// Pre-norm transformer block: x += attn(ln1(x)); x += mlp(ln2(x)).
struct TransformerBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Mlp mlp;

  TransformerBlock() = default;
  TransformerBlock(int d_model, int n_heads, Rng& rng)
      : ln1(d_model), ln2(d_model), attn(d_model, n_heads, rng), mlp(d_model, 4 * d_model, rng) {}

  Tensor forward(const Tensor& x, const std::vector<std::uint8_t>* key_valid = nullptr) const {
    Tensor n1 = ln1.forward(x);
    Tensor h = add(x, attn.forward(n1, n1, key_valid));
    return add(h, mlp.forward(ln2.forward(h)));
  }

  void collect(const std::string& prefix, ParamList& out) const {
    ln1.collect(prefix + ".ln1", out);
    attn.collect(prefix + ".attn", out);
    ln2.collect(prefix + ".ln2", out);
    mlp.collect(prefix + ".mlp", out);
  }
};

}  // namespace coverclip
