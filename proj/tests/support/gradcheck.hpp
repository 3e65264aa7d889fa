#pragma once

// Finite-difference gradient oracle. Independent of the tape: forward passes
// for the numeric side run with no graph in scope.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "coverclip/tensor.hpp"

namespace cctest {

inline bool close_rel(double a, double b, double rtol, double atol = 1e-7) {
  return std::abs(a - b) <= rtol * std::max(std::abs(a), std::abs(b)) + atol;
}

// Checks every entry of every listed parameter against central differences.
inline void check_gradients(const std::function<coverclip::Tensor()>& make_loss,
                            std::vector<coverclip::Tensor> params, double rtol = 1e-4,
                            double atol = 1e-7, double h = 1e-5) {
  using coverclip::Graph;
  for (auto& p : params) p.zero_grad();

  Graph g;
  {
    Graph::Scope scope(g);
    coverclip::Tensor loss = make_loss();
    g.backward(loss);
  }
  std::vector<std::vector<double>> autodiff;
  autodiff.reserve(params.size());
  for (auto& p : params)
    autodiff.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0));

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t i = 0; i < params[pi].size(); ++i) {
      const double orig = params[pi].data()[i];
      params[pi].mutable_data()[i] = orig + h;
      const double fp = make_loss().value();
      params[pi].mutable_data()[i] = orig - h;
      const double fm = make_loss().value();
      params[pi].mutable_data()[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double ad = autodiff[pi][i];
      INFO("param " << pi << " entry " << i << ": autodiff=" << ad << " fd=" << fd);
      REQUIRE(close_rel(ad, fd, rtol, atol));
    }
  }
  for (auto& p : params) p.zero_grad();
}

}  // namespace cctest
