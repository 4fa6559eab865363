#pragma once
// Central finite-difference verification of analytic gradients.

#include <functional>
#include <vector>

#include <motionid/tensor.hpp>

namespace motionid {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// f must rebuild its computation from scratch on every call, reading the
// current values of `inputs`, and return a scalar. Compares the analytic
// gradient of one backward pass against (f(x+e) - f(x-e)) / 2e per
// coordinate; relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator.
inline GradCheckReport grad_check(const std::function<TensorPtr()>& f,
                                  const std::vector<TensorPtr>& inputs, double eps = 1e-5) {
  for (const TensorPtr& x : inputs) {
    x->requires_grad = true;
    zero_grad(*x);
  }
  TensorPtr loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const TensorPtr& x : inputs) {
    if (x->grad.size() == x->values.size())
      analytic.push_back(x->grad);
    else
      analytic.emplace_back(x->values.size(), 0.0);
  }
  zero_grad_graph(loss);  // also resets parameters inside f not listed as inputs

  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor& x = *inputs[i];
    for (std::size_t j = 0; j < x.values.size(); ++j) {
      const double saved = x.values[j];
      double fp, fm;
      {
        NoGrad ng;
        x.values[j] = saved + eps;
        fp = f()->item();
        x.values[j] = saved - eps;
        fm = f()->item();
      }
      x.values[j] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > report.max_rel_err) report.max_rel_err = rel;
      ++report.checked;
    }
  }
  return report;
}

}  // namespace motionid
