#include "sbi/ndnet/made.hpp"

#include <algorithm>

#include "sbi/core/errors.hpp"

namespace sbi::nn {

std::vector<Tensor> made_masks(int dim, std::span<const int> hidden_sizes, int n_params_per_dim,
                               std::span<const int> order, int context_dim) {
  if (dim < 1) throw ContractError("made_masks: dim must be >= 1");
  if (n_params_per_dim < 1) throw ContractError("made_masks: n_params_per_dim must be >= 1");
  if (static_cast<int>(order.size()) != dim) throw ContractError("made_masks: order must have dim entries");
  std::vector<int> check(order.begin(), order.end());
  std::sort(check.begin(), check.end());
  for (int i = 0; i < dim; ++i)
    if (check[static_cast<std::size_t>(i)] != i) throw ContractError("made_masks: order is not a permutation");

  std::vector<int> in_deg(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim; ++i) in_deg[static_cast<std::size_t>(i)] = order[static_cast<std::size_t>(i)] + 1;

  std::vector<Tensor> masks;
  std::vector<int> prev;  // degrees of the previous hidden layer
  for (std::size_t l = 0; l < hidden_sizes.size(); ++l) {
    const int width = hidden_sizes[l];
    std::vector<int> deg(static_cast<std::size_t>(width));
    for (int k = 0; k < width; ++k) deg[static_cast<std::size_t>(k)] = k % dim;
    if (l == 0) {
      Tensor m = Tensor::Ones(dim + context_dim, width);
      for (int i = 0; i < dim; ++i)
        for (int k = 0; k < width; ++k)
          m(i, k) = deg[static_cast<std::size_t>(k)] >= in_deg[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
      masks.push_back(std::move(m));
    } else {
      Tensor m(static_cast<Eigen::Index>(prev.size()), width);
      for (std::size_t a = 0; a < prev.size(); ++a)
        for (int k = 0; k < width; ++k)
          m(static_cast<Eigen::Index>(a), k) = deg[static_cast<std::size_t>(k)] >= prev[a] ? 1.0 : 0.0;
      masks.push_back(std::move(m));
    }
    prev = std::move(deg);
  }

  const int n_out = dim * n_params_per_dim;
  if (hidden_sizes.empty()) {
    Tensor m = Tensor::Ones(dim + context_dim, n_out);
    for (int p = 0; p < n_params_per_dim; ++p)
      for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j)
          m(j, p * dim + i) = in_deg[static_cast<std::size_t>(i)] > in_deg[static_cast<std::size_t>(j)] ? 1.0 : 0.0;
    masks.push_back(std::move(m));
  } else {
    Tensor m(static_cast<Eigen::Index>(prev.size()), n_out);
    for (std::size_t a = 0; a < prev.size(); ++a)
      for (int p = 0; p < n_params_per_dim; ++p)
        for (int i = 0; i < dim; ++i)
          m(static_cast<Eigen::Index>(a), p * dim + i) = in_deg[static_cast<std::size_t>(i)] > prev[a] ? 1.0 : 0.0;
    masks.push_back(std::move(m));
  }
  return masks;
}

}  // namespace sbi::nn
