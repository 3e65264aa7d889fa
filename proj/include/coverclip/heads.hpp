#pragma once

// Training-only guidance heads reading the vision tower's final token
// sequence: a presence classifier (does the cover carry rendered text?) and a
// semantic matching head (is this text the cover's text?). Neither exists at
// inference time.

#include <string>
#include <vector>

#include "coverclip/encoders.hpp"
#include "coverclip/nn.hpp"

namespace coverclip {

constexpr int kGuidanceLayers = 3;

class PresenceHead {
 public:
  PresenceHead() = default;
  PresenceHead(const ModelConfig& cfg, Rng& rng) : d_model_(cfg.d_model) {
    for (int i = 0; i < kGuidanceLayers; ++i) blocks_.emplace_back(cfg.d_model, cfg.heads, rng);
    mlp_hidden_ = Linear(cfg.d_model, cfg.d_model, rng);
    mlp_out_ = Linear(cfg.d_model, 1, rng);
  }

  // vision_tokens: [b, 1+P, d_model] -> one presence logit per item.
  Tensor forward(const Tensor& vision_tokens) const {
    if (vision_tokens.ndim() != 3 || vision_tokens.dim(2) != d_model_)
      throw ShapeError("presence head: expected [b,L," + std::to_string(d_model_) + "], got " +
                       shape_str(vision_tokens.shape()));
    Tensor x = vision_tokens;
    for (const TransformerBlock& block : blocks_) x = block.forward(x);
    Tensor pooled = mean_tokens(x);
    Tensor logits = mlp_out_.forward(gelu(mlp_hidden_.forward(pooled)));
    return reshape(logits, {vision_tokens.dim(0)});
  }

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(prefix + ".blocks." + std::to_string(i), out);
    mlp_hidden_.collect(prefix + ".mlp_hidden", out);
    mlp_out_.collect(prefix + ".mlp_out", out);
  }

 private:
  int d_model_ = 0;
  std::vector<TransformerBlock> blocks_;
  Linear mlp_hidden_;
  Linear mlp_out_;
};

// One semantic-head layer: self-attention over the sample state, then
// cross-attention with the vision tokens as keys/values, then an MLP, all
// residual. The sample state is a length-1 sequence updated layer by layer;
// the vision tokens are read-only.
struct SemanticHeadLayer {
  LayerNorm ln_self, ln_cross, ln_mlp;
  MultiHeadAttention self_attn, cross_attn;
  Mlp mlp;

  SemanticHeadLayer() = default;
  SemanticHeadLayer(int d_model, int heads, Rng& rng)
      : ln_self(d_model),
        ln_cross(d_model),
        ln_mlp(d_model),
        self_attn(d_model, heads, rng),
        cross_attn(d_model, heads, rng),
        mlp(d_model, 4 * d_model, rng) {}

  Tensor forward(const Tensor& state, const Tensor& vision_tokens) const {
    Tensor n = ln_self.forward(state);
    Tensor s = add(state, self_attn.forward(n, n));
    s = add(s, cross_attn.forward(ln_cross.forward(s), vision_tokens));
    return add(s, mlp.forward(ln_mlp.forward(s)));
  }

  void collect(const std::string& prefix, ParamList& out) const {
    ln_self.collect(prefix + ".ln_self", out);
    self_attn.collect(prefix + ".self_attn", out);
    ln_cross.collect(prefix + ".ln_cross", out);
    cross_attn.collect(prefix + ".cross_attn", out);
    ln_mlp.collect(prefix + ".ln_mlp", out);
    mlp.collect(prefix + ".mlp", out);
  }
};

class SemanticHead {
 public:
  SemanticHead() = default;
  SemanticHead(const ModelConfig& cfg, Rng& rng) : d_model_(cfg.d_model) {
    for (int i = 0; i < kGuidanceLayers; ++i) layers_.emplace_back(cfg.d_model, cfg.heads, rng);
    ln_final_ = LayerNorm(cfg.d_model);
    mlp_hidden_ = Linear(cfg.d_model, cfg.d_model, rng);
    mlp_out_ = Linear(cfg.d_model, 1, rng);
  }

  // vision_tokens: [b, 1+P, d_model]; sample_embedding: [b, d_model] from the
  // frozen auxiliary text encoder. Returns one match logit per item.
  Tensor forward(const Tensor& vision_tokens, const Tensor& sample_embedding) const {
    if (vision_tokens.ndim() != 3 || vision_tokens.dim(2) != d_model_)
      throw ShapeError("semantic head: bad vision tokens " + shape_str(vision_tokens.shape()));
    if (sample_embedding.ndim() != 2 || sample_embedding.dim(1) != d_model_ ||
        sample_embedding.dim(0) != vision_tokens.dim(0))
      throw ShapeError("semantic head: sample embedding " + shape_str(sample_embedding.shape()) +
                       " does not match vision tokens " + shape_str(vision_tokens.shape()));
    Tensor state = reshape(sample_embedding, {sample_embedding.dim(0), 1, d_model_});
    for (const SemanticHeadLayer& layer : layers_) state = layer.forward(state, vision_tokens);
    Tensor pooled = reshape(ln_final_.forward(state), {sample_embedding.dim(0), d_model_});
    Tensor logits = mlp_out_.forward(gelu(mlp_hidden_.forward(pooled)));
    return reshape(logits, {sample_embedding.dim(0)});
  }

  void collect(const std::string& prefix, ParamList& out) const {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i].collect(prefix + ".layers." + std::to_string(i), out);
    ln_final_.collect(prefix + ".ln_final", out);
    mlp_hidden_.collect(prefix + ".mlp_hidden", out);
    mlp_out_.collect(prefix + ".mlp_out", out);
  }

 private:
  int d_model_ = 0;
  std::vector<SemanticHeadLayer> layers_;
  LayerNorm ln_final_;
  Linear mlp_hidden_;
  Linear mlp_out_;
};

}  // namespace coverclip
