#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include <gtest/gtest.h>

#include "jamba/ops.hpp"
#include "jamba/rng.hpp"
#include "jamba/tensor.hpp"

namespace jamba::testing {

inline Tensor random_param(Rng& rng, Shape shape, double stddev = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor::parameter(std::move(shape), std::move(v));
}

inline Tensor random_tensor(Rng& rng, Shape shape, double stddev = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal(0.0, stddev);
  return Tensor::from_vector(std::move(shape), std::move(v));
}

// Central-difference check of every entry of every input against reverse mode.
// f must rebuild its scalar output from the inputs' current values.
inline void expect_gradients(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                             double rtol = 1e-5, double atol = 1e-8, double h = 1e-5) {
  for (auto& t : inputs) t.zero_grad();
  backward(f());
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) {
    auto g = t.grad();
    analytic.emplace_back(g.begin(), g.end());
    if (analytic.back().empty()) analytic.back().assign(t.numel(), 0.0);
  }
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto w = inputs[k].mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + h;
      const double fp = f().item();
      w[i] = saved - h;
      const double fm = f().item();
      w[i] = saved;
      const double numeric = (fp - fm) / (2 * h);
      const double a = analytic[k][i];
      const double tol = std::max(atol, rtol * std::max(std::abs(a), std::abs(numeric)));
      EXPECT_NEAR(a, numeric, tol) << "input " << k << " entry " << i;
    }
  }
}

// Weighted sum so every output entry carries a distinct upstream gradient.
inline Tensor probe_sum(const Tensor& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<double> w(y.numel());
  for (double& x : w) x = rng.normal();
  return sum(mul(y, Tensor::from_vector(y.shape(), std::move(w))));
}

}  // namespace jamba::testing
