#pragma once

// The assembled model: both towers, the learned logit scale, the optional
// guidance heads, and the frozen auxiliary text encoder used for sample-text
// embeddings. Each section initializes from its own derived seed stream, so
// adding or removing heads never disturbs the encoder weights.

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>

#include "coverclip/encoders.hpp"
#include "coverclip/heads.hpp"

namespace coverclip {

// ln(1/0.07), the usual contrastive logit-scale initialization.
inline double initial_log_inv_tau() { return std::log(1.0 / 0.07); }

inline void copy_parameters(const ParamList& src, const ParamList& dst) {
  if (src.size() != dst.size()) throw ContractError("copy_parameters: section size mismatch");
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (src[i].tensor.size() != dst[i].tensor.size())
      throw ContractError("copy_parameters: size mismatch at " + src[i].name);
    Tensor d = dst[i].tensor;
    d.mutable_data() = src[i].tensor.data();
  }
}

struct CoverClipModel {
  ModelConfig config;
  VisionTower vision;
  TextTower text;
  Tensor log_inv_tau;
  std::optional<PresenceHead> presence_head;
  std::optional<SemanticHead> semantic_head;
  // Frozen snapshot of the text tower taken at construction (training step 0);
  // embeds matching-task sample texts and the mining index, never updated.
  std::shared_ptr<TextTower> aux_text;

  CoverClipModel() = default;

  CoverClipModel(const ModelConfig& cfg, std::uint64_t seed, bool with_presence,
                 bool with_semantic)
      : config(cfg) {
    cfg.validate();
    Rng vision_rng(derive_seed(seed, "init-vision"));
    vision = VisionTower(cfg, vision_rng);
    Rng text_rng(derive_seed(seed, "init-text"));
    text = TextTower(cfg, text_rng);
    log_inv_tau = Tensor::scalar(initial_log_inv_tau()).set_requires_grad(true);
    if (with_presence) {
      Rng rng(derive_seed(seed, "init-presence"));
      presence_head.emplace(cfg, rng);
    }
    if (with_semantic) {
      Rng rng(derive_seed(seed, "init-semantic"));
      semantic_head.emplace(cfg, rng);
      refresh_aux_snapshot();
    }
  }

  // Re-freezes the auxiliary encoder to the text tower's current weights.
  void refresh_aux_snapshot() {
    Rng scratch(0);
    aux_text = std::make_shared<TextTower>(config, scratch);
    ParamList src, dst;
    text.collect("aux", src);
    aux_text->collect("aux", dst);
    copy_parameters(src, dst);
    for (NamedTensor& p : dst) {
      Tensor t = p.tensor;
      t.set_requires_grad(false);
    }
  }

  VisionOutput encode_image(const Tensor& images) const { return vision.forward(images); }

  Tensor encode_text(const std::vector<TokenSequence>& seqs) const {
    return text.forward_embedding(seqs);
  }

  Tensor embed_sample_text(const std::vector<TokenSequence>& seqs) const {
    if (!aux_text) throw ContractError("embed_sample_text: no frozen auxiliary encoder");
    return aux_text->forward_cls_state(seqs);
  }

  ParamList encoder_parameters() const {
    ParamList out;
    vision.collect("vision", out);
    text.collect("text", out);
    collect_param(out, "logit_scale", log_inv_tau);
    return out;
  }

  ParamList head_parameters() const {
    ParamList out;
    if (presence_head) presence_head->collect("presence", out);
    if (semantic_head) semantic_head->collect("semantic", out);
    return out;
  }

  ParamList aux_parameters() const {
    ParamList out;
    if (aux_text) aux_text->collect("aux", out);
    return out;
  }

  ParamList trainable_parameters() const {
    ParamList out = encoder_parameters();
    ParamList heads = head_parameters();
    out.insert(out.end(), heads.begin(), heads.end());
    return out;
  }
};

}  // namespace coverclip
