#pragma once

// Training objectives: the symmetric contrastive loss over a batch, the two
// binary guidance losses, and their weighted combination. Disabled components
// are simply absent; they contribute exactly zero and no gradients.

#include <optional>

#include "coverclip/encoders.hpp"
#include "coverclip/tensor.hpp"

namespace coverclip {

struct LossWeights {
  double lambda1 = 0.8;  // contrastive
  double lambda2 = 0.1;  // presence
  double lambda3 = 0.1;  // matching

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0)
      throw ConfigError("loss weights must be nonnegative");
    if (lambda1 <= 0) throw ConfigError("the contrastive weight must stay positive");
  }
};

// Symmetric InfoNCE: mean of image->text and text->image cross-entropy over
// the pairwise similarity matrix, matched pairs on the diagonal.
inline Tensor itc_loss(const Tensor& img_emb, const Tensor& txt_emb, const Tensor& log_inv_tau) {
  if (img_emb.ndim() != 2 || img_emb.shape() != txt_emb.shape())
    throw ShapeError("itc_loss: embeddings must be matching [b,d]");
  const int b = img_emb.dim(0);
  if (b < 2)
    throw ContractError("itc_loss: contrastive loss needs a batch of at least 2, got " +
                        std::to_string(b));
  Tensor logits = similarity_matrix(img_emb, txt_emb, log_inv_tau);
  std::vector<int> diag(static_cast<std::size_t>(b));
  for (int i = 0; i < b; ++i) diag[static_cast<std::size_t>(i)] = i;
  Tensor i2t = cross_entropy_from_logits(logits, diag);
  Tensor t2i = cross_entropy_from_logits(transpose2d(logits), diag);
  return scale(add(i2t, t2i), 0.5);
}

inline Tensor ic_loss(const Tensor& logits, std::span<const std::uint8_t> presence_labels) {
  return bce_with_logits(logits, presence_labels);
}

inline Tensor itm_loss(const Tensor& logits, std::span<const std::uint8_t> match_labels) {
  return bce_with_logits(logits, match_labels);
}

// L_total = l1*L_itc + l2*L_ic + l3*L_itm. A disabled component must be
// absent; pairing a missing component with a positive weight is an error.
inline Tensor total_loss(const Tensor& l_itc, const std::optional<Tensor>& l_ic,
                         const std::optional<Tensor>& l_itm, const LossWeights& w) {
  w.validate();
  std::vector<std::pair<double, Tensor>> terms{{w.lambda1, l_itc}};
  if (w.lambda2 > 0) {
    if (!l_ic) throw ContractError("total_loss: lambda2 > 0 but no presence loss supplied");
    terms.emplace_back(w.lambda2, *l_ic);
  }
  if (w.lambda3 > 0) {
    if (!l_itm) throw ContractError("total_loss: lambda3 > 0 but no matching loss supplied");
    terms.emplace_back(w.lambda3, *l_itm);
  }
  return weighted_sum(terms);
}

}  // namespace coverclip
