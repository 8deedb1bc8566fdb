#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "sbi/core/prior.hpp"
#include "sbi/core/types.hpp"

namespace sbi::mcmc {

/// Posterior draws, one n_draws x dim matrix per chain.
struct ChainSet {
  std::vector<Matrix> chains;
  ParamLayout layout;

  [[nodiscard]] int n_chains() const noexcept { return static_cast<int>(chains.size()); }
  [[nodiscard]] Eigen::Index n_draws() const noexcept { return chains.empty() ? 0 : chains.front().rows(); }
  [[nodiscard]] int dim() const noexcept { return layout.total_dim(); }

  /// Throws ContractError on an empty set, ragged chains, a width that
  /// disagrees with the layout, or non-finite draws.
  void validate() const;
  /// Flattened coordinate `col` as n_draws x n_chains.
  [[nodiscard]] Matrix coordinate(int col) const;
  /// All draws stacked chain by chain.
  [[nodiscard]] Matrix pooled() const;
  [[nodiscard]] ThetaBatch pooled_theta() const;
};

/// Header "chain,draw,<name>_<i>...", one line per draw.
void write_chainset_csv(std::ostream& out, const ChainSet& c);
void write_chainset_csv(const std::string& path, const ChainSet& c);
ChainSet read_chainset_csv(std::istream& in);
ChainSet read_chainset_csv(const std::string& path);

}  // namespace sbi::mcmc
