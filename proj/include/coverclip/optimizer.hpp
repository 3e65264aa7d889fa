#pragma once

// AdamW with decoupled weight decay, plus global-norm gradient clipping.
// Parameters without a populated gradient on a given step are left untouched
// (heads that did not run this step neither move nor decay).

#include <cmath>
#include <string>
#include <vector>

#include "coverclip/checkpoint.hpp"
#include "coverclip/nn.hpp"

namespace coverclip {

struct AdamWConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-3;
};

inline double clip_grad_norm(const ParamList& params, double max_norm) {
  double sq = 0.0;
  for (const NamedTensor& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const NamedTensor& p : params) {
      if (!p.tensor.has_grad()) continue;
      Tensor t = p.tensor;
      for (double& g : t.node()->grad) g *= factor;
    }
  }
  return norm;
}

class AdamW {
 public:
  AdamW() = default;
  AdamW(ParamList params, const AdamWConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i].tensor.size(), 0.0);
      v_[i].assign(params_[i].tensor.size(), 0.0);
    }
  }

  void step() {
    ++step_count_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, step_count_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, step_count_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor t = params_[i].tensor;
      if (!t.has_grad()) continue;
      const std::vector<double>& g = t.grad();
      std::vector<double>& data = t.mutable_data();
      for (std::size_t k = 0; k < data.size(); ++k) {
        m_[i][k] = cfg_.beta1 * m_[i][k] + (1.0 - cfg_.beta1) * g[k];
        v_[i][k] = cfg_.beta2 * v_[i][k] + (1.0 - cfg_.beta2) * g[k] * g[k];
        const double mhat = m_[i][k] / bc1;
        const double vhat = v_[i][k] / bc2;
        data[k] -= cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * data[k]);
      }
    }
  }

  void zero_grad() {
    for (NamedTensor& p : params_) p.tensor.zero_grad();
  }

  long long step_count() const { return step_count_; }

  // Moments flattened for the checkpoint's optimizer section.
  RawSection serialize() const {
    RawSection out;
    out.emplace_back("step_count", std::vector<double>{static_cast<double>(step_count_)});
    for (std::size_t i = 0; i < params_.size(); ++i) {
      out.emplace_back("m/" + params_[i].name, m_[i]);
      out.emplace_back("v/" + params_[i].name, v_[i]);
    }
    return out;
  }

  void restore(const std::unordered_map<std::string, std::vector<double>>& arrays) {
    auto it = arrays.find("step_count");
    if (it == arrays.end() || it->second.size() != 1)
      throw IoError("optimizer state lacks step_count");
    step_count_ = static_cast<long long>(it->second[0]);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto mi = arrays.find("m/" + params_[i].name);
      auto vi = arrays.find("v/" + params_[i].name);
      if (mi == arrays.end() || vi == arrays.end())
        throw IoError("optimizer state lacks moments for " + params_[i].name);
      if (mi->second.size() != m_[i].size() || vi->second.size() != v_[i].size())
        throw ConfigError("optimizer moment size mismatch for " + params_[i].name);
      m_[i] = mi->second;
      v_[i] = vi->second;
    }
  }

 private:
  ParamList params_;
  AdamWConfig cfg_;
  long long step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace coverclip
