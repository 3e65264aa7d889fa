#pragma once

// The dual-tower backbone: a small vision transformer that yields both its
// final token sequence (consumed by the guidance heads) and a projected
// unit-norm global embedding, plus a transformer text encoder with padding
// masked in attention. These two towers are the entire inference path.

#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "coverclip/nn.hpp"
#include "coverclip/tokenizer.hpp"

namespace coverclip {

struct ModelConfig {
  int d_model = 64;
  int d_proj = 32;
  int image_layers = 2;
  int text_layers = 2;
  int heads = 4;
  int patch_size = 8;
  int image_resolution = 64;
  int max_text_len = 12;
  int vocab_size = 0;

  void validate() const {
    if (d_model <= 0 || d_proj <= 0 || image_layers <= 0 || text_layers <= 0 || heads <= 0)
      throw ConfigError("model dimensions must be positive");
    if (d_model % heads != 0)
      throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by " +
                        std::to_string(heads) + " heads");
    if (image_resolution % patch_size != 0)
      throw ConfigError("image_resolution " + std::to_string(image_resolution) +
                        " is not divisible by patch_size " + std::to_string(patch_size));
    if (max_text_len < 1) throw ConfigError("max_text_len must be at least 1");
    if (vocab_size < 3) throw ConfigError("vocab_size must cover the special tokens");
  }

  int num_patches() const {
    const int side = image_resolution / patch_size;
    return side * side;
  }

  nlohmann::json to_json() const {
    return {{"d_model", d_model},
            {"d_proj", d_proj},
            {"image_layers", image_layers},
            {"text_layers", text_layers},
            {"heads", heads},
            {"patch_size", patch_size},
            {"image_resolution", image_resolution},
            {"max_text_len", max_text_len},
            {"vocab_size", vocab_size}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.d_proj = j.at("d_proj").get<int>();
    c.image_layers = j.at("image_layers").get<int>();
    c.text_layers = j.at("text_layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.image_resolution = j.at("image_resolution").get<int>();
    c.max_text_len = j.at("max_text_len").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    return c;
  }
};

struct VisionOutput {
  Tensor tokens;     // [b, 1+P, d_model], final-layer sequence after the last norm
  Tensor embedding;  // [b, d_proj], unit rows
};

class VisionTower {
 public:
  VisionTower() = default;
  VisionTower(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const int pvec = cfg.patch_size * cfg.patch_size * 3;
    patch_embed_ = Linear(pvec, cfg.d_model, rng);
    cls_token_ = Tensor::randn({cfg.d_model}, rng, kInitStd).set_requires_grad(true);
    pos_embedding_ =
        Tensor::randn({1 + cfg.num_patches(), cfg.d_model}, rng, kInitStd).set_requires_grad(true);
    blocks_.reserve(static_cast<std::size_t>(cfg.image_layers));
    for (int i = 0; i < cfg.image_layers; ++i) blocks_.emplace_back(cfg.d_model, cfg.heads, rng);
    ln_final_ = LayerNorm(cfg.d_model);
    proj_ = Linear(cfg.d_model, cfg.d_proj, rng, /*with_bias=*/false);
  }

  VisionOutput forward(const Tensor& images) const {
    if (images.ndim() != 4 || images.dim(1) != cfg_.image_resolution ||
        images.dim(2) != cfg_.image_resolution || images.dim(3) != 3)
      throw ShapeError("encode_image: expected [b," + std::to_string(cfg_.image_resolution) +
                       "," + std::to_string(cfg_.image_resolution) + ",3], got " +
                       shape_str(images.shape()));
    Tensor x = patch_embed_.forward(extract_patches(images, cfg_.patch_size));
    x = prepend_token(cls_token_, x);
    x = add_position(x, pos_embedding_);
    for (const TransformerBlock& block : blocks_) x = block.forward(x);
    VisionOutput out;
    out.tokens = ln_final_.forward(x);
    out.embedding = l2_normalize_rows(proj_.forward(select_token(out.tokens, 0)));
    return out;
  }

  void collect(const std::string& prefix, ParamList& out) const {
    patch_embed_.collect(prefix + ".patch_embed", out);
    collect_param(out, prefix + ".cls_token", cls_token_);
    collect_param(out, prefix + ".pos_embedding", pos_embedding_);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(prefix + ".blocks." + std::to_string(i), out);
    ln_final_.collect(prefix + ".ln_final", out);
    proj_.collect(prefix + ".proj", out);
  }

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  Linear patch_embed_;
  Tensor cls_token_;
  Tensor pos_embedding_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm ln_final_;
  Linear proj_;
};

class TextTower {
 public:
  TextTower() = default;
  TextTower(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    token_embedding_ =
        Tensor::randn({cfg.vocab_size, cfg.d_model}, rng, kInitStd).set_requires_grad(true);
    pos_embedding_ =
        Tensor::randn({cfg.max_text_len, cfg.d_model}, rng, kInitStd).set_requires_grad(true);
    blocks_.reserve(static_cast<std::size_t>(cfg.text_layers));
    for (int i = 0; i < cfg.text_layers; ++i) blocks_.emplace_back(cfg.d_model, cfg.heads, rng);
    ln_final_ = LayerNorm(cfg.d_model);
    proj_ = Linear(cfg.d_model, cfg.d_proj, rng, /*with_bias=*/false);
  }

  // Pre-projection [CLS] state, [b, d_model]. Padding never reaches position 0:
  // masked attention is the only cross-position path.
  Tensor forward_cls_state(const std::vector<TokenSequence>& seqs) const {
    if (seqs.empty()) throw ShapeError("encode_text: empty batch");
    const int b = static_cast<int>(seqs.size());
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(b) * cfg_.max_text_len);
    std::vector<std::uint8_t> key_valid;
    key_valid.reserve(ids.capacity());
    for (const TokenSequence& s : seqs) {
      if (static_cast<int>(s.ids.size()) != cfg_.max_text_len)
        throw ShapeError("encode_text: sequence not padded to max_text_len");
      for (int id : s.ids) {
        if (id < 0 || id >= cfg_.vocab_size)
          throw IndexError("encode_text: token id " + std::to_string(id) +
                           " out of range [0," + std::to_string(cfg_.vocab_size) + ")");
        ids.push_back(id);
      }
      const auto mask = s.attention_mask();
      key_valid.insert(key_valid.end(), mask.begin(), mask.end());
    }
    Tensor x = embedding_lookup(token_embedding_, ids, b, cfg_.max_text_len);
    x = add_position(x, pos_embedding_);
    for (const TransformerBlock& block : blocks_) x = block.forward(x, &key_valid);
    return select_token(ln_final_.forward(x), 0);
  }

  // Projected unit-norm embedding, [b, d_proj].
  Tensor forward_embedding(const std::vector<TokenSequence>& seqs) const {
    return l2_normalize_rows(proj_.forward(forward_cls_state(seqs)));
  }

  void collect(const std::string& prefix, ParamList& out) const {
    collect_param(out, prefix + ".token_embedding", token_embedding_);
    collect_param(out, prefix + ".pos_embedding", pos_embedding_);
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      blocks_[i].collect(prefix + ".blocks." + std::to_string(i), out);
    ln_final_.collect(prefix + ".ln_final", out);
    proj_.collect(prefix + ".proj", out);
  }

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  Tensor token_embedding_;
  Tensor pos_embedding_;
  std::vector<TransformerBlock> blocks_;
  LayerNorm ln_final_;
  Linear proj_;
};

// Pairwise scaled similarities: entry (i,j) = (img_i . txt_j) / tau, with the
// learned inverse temperature stored in log space and capped at 100 so logits
// stay bounded for any parameter value.
inline Tensor similarity_matrix(const Tensor& img_emb, const Tensor& txt_emb,
                                const Tensor& log_inv_tau) {
  if (img_emb.ndim() != 2 || txt_emb.ndim() != 2 || img_emb.dim(1) != txt_emb.dim(1))
    throw ShapeError("similarity_matrix: " + shape_str(img_emb.shape()) + " vs " +
                     shape_str(txt_emb.shape()));
  Tensor raw = matmul(img_emb, txt_emb, false, true);
  return mul_scalar_tensor(raw, exp_clamped(log_inv_tau, 100.0));
}

}  // namespace coverclip
