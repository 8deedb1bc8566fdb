#pragma once

#include <span>
#include <vector>

#include "sbi/ndnet/autodiff.hpp"

namespace sbi::nn {

/// Connectivity masks for a MADE conditioner over inputs [x (dim), context
/// (context_dim)] and outputs laid out parameter-major: column p*dim + i
/// holds parameter p of coordinate i.
///
/// `order[i]` is the autoregressive position of coordinate i. Input i gets
/// degree order[i]+1, hidden unit k gets degree k mod dim, and
///   input -> hidden  : hidden degree >= input degree (context always on)
///   hidden -> hidden : degree non-decreasing
///   hidden -> output : output degree > hidden degree
/// so output block i sees exactly the inputs j with order[j] < order[i].
std::vector<Tensor> made_masks(int dim, std::span<const int> hidden_sizes, int n_params_per_dim,
                               std::span<const int> order, int context_dim = 0);

}  // namespace sbi::nn
