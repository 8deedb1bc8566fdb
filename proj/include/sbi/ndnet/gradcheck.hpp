#pragma once

#include <string>

#include "sbi/ndnet/autodiff.hpp"

namespace sbi::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_entry;  // "<name>[r,c]"
  std::size_t n_checked = 0;
};

/// Compares the reverse-mode gradient against central differences with step
/// `h`, entry by entry. The per-entry error is |a - f| / max(|a|, |f|, floor);
/// the floor keeps entries whose true value sits at the finite-difference
/// round-off level from dominating.
GradCheckResult check_gradient(const LossFn& loss, const NetParams& params, double h = 1e-5, double floor = 1e-4);

}  // namespace sbi::nn
