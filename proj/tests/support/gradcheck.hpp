#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "elx/autodiff.hpp"

namespace elx::testing {

/// Central finite differences against the tape gradients.
///
/// The error is measured against max(|numeric|, |analytic|) with a floor of
/// one thousandth of the tensor's gradient scale, so elements whose true
/// gradient is zero (bias feeding a batchnorm, say) compare against the
/// finite-difference noise floor instead of dividing by zero.
inline double max_rel_err(const std::vector<ad::Param*>& params, const std::function<ad::Tensor()>& f,
                          double h = 1e-5) {
  ad::Tensor loss = f();
  for (auto* p : params) p->zero_grad();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (auto* p : params) analytic.push_back(p->value.grad());
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& v = params[pi]->value.val();
    double tscale = 1e-8;
    for (double a : analytic[pi]) tscale = std::max(tscale, std::abs(a));
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double fp = f().item();
      v[i] = keep - h;
      const double fm = f().item();
      v[i] = keep;
      const double num = (fp - fm) / (2.0 * h);
      const double an = analytic[pi][i];
      const double denom = std::max({std::abs(num), std::abs(an), 1e-3 * tscale, 1e-6});
      worst = std::max(worst, std::abs(num - an) / denom);
    }
  }
  return worst;
}

}  // namespace elx::testing
