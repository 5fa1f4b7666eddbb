#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "gradcoo/rng.hpp"
#include "gradcoo/tensor.hpp"

namespace testutil {

// Central finite difference of a scalar function of a flat coordinate vector.
// Used as the independent oracle for every analytic gradient in the suite:
// it only ever runs forward evaluations.
inline double central_difference(const std::function<double(const std::vector<double>&)>& f,
                                 std::vector<double> x, std::size_t i, double h = 1e-5) {
  x[i] += h;
  const double up = f(x);
  x[i] -= 2.0 * h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

inline double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

inline std::vector<double> random_values(gradcoo::Rng& rng, std::size_t n, double lo = -2.0,
                                         double hi = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace testutil
