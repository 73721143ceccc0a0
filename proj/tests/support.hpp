#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "bimvfi/autograd.hpp"
#include "bimvfi/motionfield.hpp"
#include "bimvfi/tensor.hpp"

namespace bimvfi::testing {

inline Tensor random_tensor(int c, int h, int w, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(c, h, w);
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Builds a scalar from differentiable leaves holding the given inputs.
using ScalarFn = std::function<ag::Var(ag::Graph&, const std::vector<ag::Var>&)>;

struct GradCheck {
  double worst_rel = 0.0;
  int checked = 0;
};

/// Compares backprop gradients against a five-point central difference for
/// every input element. Relative error is |a - n| / max(|a| + |n|, floor).
inline GradCheck check_gradients(const ScalarFn& fn, std::vector<Tensor> inputs, double h = 1e-4,
                                 double floor = 1e-8) {
  std::vector<Tensor> analytic;
  {
    ag::Graph g;
    std::vector<ag::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.leaf(t));
    g.backward(fn(g, leaves));
    for (const auto& v : leaves) {
      const Tensor* gr = g.grad_if_any(v.id());
      analytic.push_back(gr != nullptr ? *gr : Tensor(v.channels(), v.height(), v.width()));
    }
  }
  auto eval = [&]() {
    ag::Graph g;
    std::vector<ag::Var> leaves;
    for (const auto& t : inputs) leaves.push_back(g.constant(t));
    return fn(g, leaves).value()[0];
  };
  GradCheck out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double old = inputs[k][i];
      auto at = [&](double offset) {
        inputs[k][i] = old + offset;
        return eval();
      };
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
      inputs[k][i] = old;
      const double a = analytic[k][i];
      const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), floor);
      out.worst_rel = std::max(out.worst_rel, rel);
      ++out.checked;
    }
  }
  return out;
}

}  // namespace bimvfi::testing
