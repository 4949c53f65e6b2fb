#ifndef MVPCACHE_TESTS_QUADRATURE_HPP
#define MVPCACHE_TESTS_QUADRATURE_HPP

// Trapezoid-rule integration of prod_t Poisson(y_t | lambda) Gamma(lambda | a, b)
// over lambda, returned in log space.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace quadrature {

inline double log_poisson_gamma_integral(const std::vector<std::int64_t>& ys, double a, double b,
                                         std::size_t points = 400000) {
  double S = 0.0, lfact = 0.0;
  for (auto y : ys) {
    S += static_cast<double>(y);
    lfact += std::lgamma(static_cast<double>(y) + 1.0);
  }
  const double n = static_cast<double>(ys.size());
  auto log_integrand = [&](double lam) {
    return (a + S - 1.0) * std::log(lam) - (n + b) * lam + a * std::log(b) - std::lgamma(a) - lfact;
  };
  // lambda = u^2 smooths the power-law behaviour at zero.
  const double shape = a + S, rate = n + b;
  const double upper = std::sqrt((shape + 40.0 * std::sqrt(shape) + 60.0) / rate);
  const double h = upper / static_cast<double>(points);
  std::vector<double> logs(points + 1);
  double peak = -INFINITY;
  for (std::size_t i = 0; i <= points; ++i) {
    const double u = h * static_cast<double>(i);
    logs[i] = u == 0.0 ? -INFINITY : log_integrand(u * u) + std::log(2.0 * u);
    peak = std::max(peak, logs[i]);
  }
  double acc = 0.0;
  for (std::size_t i = 0; i <= points; ++i) {
    const double w = (i == 0 || i == points) ? 0.5 : 1.0;
    acc += w * std::exp(logs[i] - peak);
  }
  return peak + std::log(acc * h);
}

}  // namespace quadrature

#endif  // MVPCACHE_TESTS_QUADRATURE_HPP
