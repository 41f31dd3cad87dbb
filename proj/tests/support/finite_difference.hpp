#pragma once

// Central finite differences, kept independent of the autodiff code paths so
// gradient tests have a separate oracle.

#include <Eigen/Dense>

#include <algorithm>
#include <functional>

namespace uimer::testing {

inline Eigen::MatrixXd central_difference(const std::function<double(const Eigen::MatrixXd&)>& f,
                                          const Eigen::MatrixXd& at, double h = 1e-4) {
  Eigen::MatrixXd g(at.rows(), at.cols());
  Eigen::MatrixXd x = at;
  for (Eigen::Index i = 0; i < at.size(); ++i) {
    const double orig = x(i);
    x(i) = orig + h;
    const double up = f(x);
    x(i) = orig - h;
    const double down = f(x);
    x(i) = orig;
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||), zero when both vanish.
inline double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(a.norm(), b.norm());
  if (scale == 0.0) return 0.0;
  return (a - b).norm() / scale;
}

}  // namespace uimer::testing
