#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "udfs/tensor.hpp"

// Central finite-difference oracle for reverse-mode gradients. The loss
// builder re-runs the forward graph from the (mutated) leaf tensors on every
// call, so the oracle stays independent of the tape it checks.
namespace gradcheck {

struct Result {
  bool ok = true;
  double max_err = 0.0;  // worst |ad - fd| / max(|ad|,|fd|,floor)
  std::string where;
};

template <typename F>
Result check(std::vector<udfs::TensorT<double>> params, F&& make_loss, double h = 1e-3,
             double rtol = 1e-3, double atol = 1e-5) {
  using udfs::TensorT;

  for (auto& p : params) p.zero_grad();
  // Fresh graph per evaluation; gradients land on the shared leaves.
  TensorT<double> l0 = make_loss();
  udfs::backward(l0);

  Result res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& value = params[pi].data();
    const auto& grad = params[pi].grad();
    for (size_t i = 0; i < value.size(); ++i) {
      const double keep = value[i];
      value[i] = keep + h;
      const double f1 = make_loss().item();
      value[i] = keep - h;
      const double f2 = make_loss().item();
      value[i] = keep;
      const double fd = (f1 - f2) / (2.0 * h);
      const double ad = grad[i];
      const double scale = std::max({std::fabs(ad), std::fabs(fd), atol / rtol});
      const double err = std::fabs(ad - fd) / scale;
      if (err > res.max_err) {
        res.max_err = err;
        res.where = "param " + std::to_string(pi) + " elem " + std::to_string(i) +
                    ": ad=" + std::to_string(ad) + " fd=" + std::to_string(fd);
      }
    }
  }
  res.ok = res.max_err <= rtol;
  return res;
}

inline udfs::TensorT<double> random_tensor(const udfs::Shape& shape, udfs::Rng& rng,
                                           double lo = -1.0, double hi = 1.0,
                                           bool requires_grad = true) {
  std::vector<double> data(udfs::shape_numel(shape));
  for (auto& x : data) x = rng.uniform(lo, hi);
  return udfs::TensorT<double>::from_data(shape, std::move(data), requires_grad);
}

inline std::vector<double> random_coefs(size_t n, udfs::Rng& rng) {
  std::vector<double> coef(n);
  for (auto& c : coef) c = rng.uniform(-1.0, 1.0);
  return coef;
}

// Projects an op output to a scalar via fixed coefficients (drawn once by the
// caller) so FD evaluations all see the same loss function.
inline udfs::TensorT<double> project(const udfs::TensorT<double>& t,
                                     const std::vector<double>& coef) {
  const int n = static_cast<int>(t.numel());
  auto flat = udfs::reshape(t, {n});
  auto weighted =
      udfs::mul(flat, udfs::TensorT<double>::from_data({n}, std::vector<double>(coef)));
  return udfs::mean(weighted, 0);
}

}  // namespace gradcheck
