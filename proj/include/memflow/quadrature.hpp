#pragma once

#include <functional>
#include <stdexcept>
#include <string>

namespace memflow {

class QuadratureError : public std::runtime_error {
 public:
  QuadratureError(const std::string& msg, double estimate)
      : std::runtime_error(msg), estimate_(estimate) {}
  double error_estimate() const { return estimate_; }

 private:
  double estimate_;
};

struct QuadResult {
  double value = 0.0;
  double error = 0.0;
  int evaluations = 0;
};

// Globally adaptive Gauss-Kronrod (7/15) on [a, b].
QuadResult integrate(const std::function<double(double)>& f, double a, double b,
                     double abs_tol = 1e-13, double rel_tol = 1e-11, int max_intervals = 2000);

}  // namespace memflow
