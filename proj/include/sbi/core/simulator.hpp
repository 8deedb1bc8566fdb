#pragma once

#include <functional>

#include "sbi/core/prior.hpp"
#include "sbi/core/rng.hpp"
#include "sbi/core/types.hpp"

namespace sbi {

/// Simulates one y row per theta row.
using Simulator = std::function<Matrix(RngKey, const ThetaBatch&)>;

/// Maps simulated data (n x d_y) to summaries (n x d_s) row by row.
using SummaryFn = std::function<Matrix(const Matrix&)>;

/// Distances between summary rows and one observed summary, n x 1.
using DistanceFn = std::function<Vector(const Matrix& s_sim, const Vector& s_obs)>;

}  // namespace sbi
