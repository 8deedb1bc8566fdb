#pragma once

#include <vector>

#include "sbi/core/types.hpp"
#include "sbi/mcmc/chains.hpp"

namespace sbi::mcmc {

/// Acceptance conventions for the summary plot: split R-hat below 1.05 and
/// relative ESS above 0.5.
inline constexpr double kRhatThreshold = 1.05;
inline constexpr double kRelEssThreshold = 0.5;

/// Per flattened coordinate.
struct Diagnostics {
  std::vector<double> split_rhat;
  std::vector<double> ess_bulk;
  std::vector<double> ess_tail;
  std::vector<double> rel_ess;

  [[nodiscard]] std::vector<bool> rhat_ok() const;
  [[nodiscard]] std::vector<bool> ess_ok() const;
};

/// Draws of one coordinate are passed as n_draws x n_chains.

/// Pooled fractional ranks (ties averaged) mapped through the inverse normal
/// CDF: z = Phi^-1((r - 3/8) / (S + 1/4)).
Matrix rank_normalize(const Matrix& draws);
/// Each chain split into halves (the middle draw dropped for odd lengths).
Matrix split_chains(const Matrix& draws);
/// Between/within variance R-hat without splitting or normalization.
double classic_rhat(const Matrix& draws);
/// Rank-normalized split R-hat. Constant draws give +inf with a warning.
double split_rhat(const Matrix& draws);
/// Autocorrelation-sum ESS with Geyer's initial monotone sequence, taken on
/// the columns as given.
double ess_raw(const Matrix& draws);
/// ESS of the rank-normalized split chains.
double ess_bulk(const Matrix& draws);
/// Minimum ESS of the 5% and 95% quantile indicators on split chains.
double ess_tail(const Matrix& draws);
/// Per-chain histograms (n_chains x n_bins) of pooled ranks.
Eigen::MatrixXi rank_stats(const Matrix& draws, int n_bins = 20);

Diagnostics diagnose(const ChainSet& chains);
/// ESS only, for engines that sample without MCMC.
Diagnostics diagnose_ess_only(const ChainSet& chains);

}  // namespace sbi::mcmc
