#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "adavid/rng.hpp"
#include "adavid/tensor.hpp"

namespace adavid::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = (2.0 * rng.uniform() - 1.0) * scale;
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(double)) == 0;
}

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Central differences computed directly on the raw buffers; independent of
// the library's grad_check.
inline std::vector<double> numeric_gradient(const std::function<double()>& f, Tensor& param, double step) {
  std::vector<double> out(param.numel());
  auto values = param.mutable_data();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double up = f();
    values[i] = saved - step;
    const double down = f();
    values[i] = saved;
    out[i] = (up - down) / (2.0 * step);
  }
  return out;
}

inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

// Gradient of a tensor as a dense vector (zeros when nothing accumulated).
inline std::vector<double> dense_grad(const Tensor& t) {
  if (!t.has_grad()) return std::vector<double>(t.numel(), 0.0);
  auto g = t.grad();
  return {g.begin(), g.end()};
}

}  // namespace adavid::testing
