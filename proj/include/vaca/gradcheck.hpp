#pragma once

// Central finite-difference verification of reverse-mode gradients.

#include <functional>
#include <span>

#include "vaca/tensor.hpp"

namespace vaca {

// Max relative error between the taped gradient of f() and central
// differences over every coordinate of every parameter. f must be a pure
// function of the parameter values (freeze any sampling noise before
// calling). Relative error is |g - fd| / max(1, |g|, |fd|).
inline double check_gradients(std::span<Tensor* const> params,
                              const std::function<Tensor()>& f, double h_scale = 1e-6) {
  for (Tensor* p : params) {
    if (!p->requires_grad()) throw std::logic_error("check_gradients: parameter without grad");
    p->zero_grad();
  }
  {
    Tape tape;
    Tensor loss = f();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (Tensor* p : params)
    analytic.emplace_back(p->grad(), p->grad() + p->size());

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double x0 = p[i];
      const double h = h_scale * std::max(1.0, std::fabs(x0));
      p[i] = x0 + h;
      const double fp = f().item();
      p[i] = x0 - h;
      const double fm = f().item();
      p[i] = x0;
      const double fd = (fp - fm) / (2.0 * h);
      const double g = analytic[pi][i];
      const double rel = std::fabs(g - fd) / std::max({1.0, std::fabs(g), std::fabs(fd)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// Single-input form: f maps a tensor to a scalar loss.
inline double check_gradients(const std::function<Tensor(Tensor&)>& f, Tensor x,
                              double h = 1e-6) {
  if (!x.requires_grad()) x.set_requires_grad(true);
  Tensor* px = &x;
  return check_gradients(std::span<Tensor* const>(&px, 1), [&]() { return f(x); }, h);
}

}  // namespace vaca
