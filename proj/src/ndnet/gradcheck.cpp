#include "sbi/ndnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sbi::nn {

GradCheckResult check_gradient(const LossFn& loss, const NetParams& params, double h, double floor) {
  const NetParams analytic = grad(loss, params);
  auto eval = [&](const NetParams& p) { return loss(as_constants(p)).item(); };
  GradCheckResult res;
  NetParams probe = params;
  for (auto& [name, t] : probe) {
    const Tensor& a = analytic.at(name);
    for (Eigen::Index r = 0; r < t.rows(); ++r)
      for (Eigen::Index c = 0; c < t.cols(); ++c) {
        const double orig = t(r, c);
        t(r, c) = orig + h;
        const double up = eval(probe);
        t(r, c) = orig - h;
        const double down = eval(probe);
        t(r, c) = orig;
        const double fd = (up - down) / (2.0 * h);
        double err = std::abs(a(r, c) - fd) / std::max({std::abs(a(r, c)), std::abs(fd), floor});
        if (std::isnan(err)) err = std::numeric_limits<double>::infinity();
        ++res.n_checked;
        if (err > res.max_rel_error) {
          res.max_rel_error = err;
          res.worst_entry = name + "[" + std::to_string(r) + "," + std::to_string(c) + "]";
        }
      }
  }
  return res;
}

}  // namespace sbi::nn
