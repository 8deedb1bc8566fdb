#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbi/core/simulator.hpp"
#include "sbi/ndnet/mlp.hpp"
#include "sbi/ndnet/optim.hpp"

namespace sbi::summaries {

/// S(y) = y.
Matrix identity_summary(const Matrix& y);

/// Row-wise Euclidean distance to `s_obs`.
Vector euclidean_distance(const Matrix& s_sim, const Vector& s_obs);

/// Learned summary: an MLP regressing the leading principal components of
/// the standardized flattened theta on standardized y. It stands in for a
/// neural sufficient-statistic network and is not one.
struct RegressionSummary {
  nn::MlpSpec spec;
  nn::NetParams params;
  RowVector y_mean;
  RowVector y_scale;
  /// theta_dim x embed_dim projection applied to standardized theta.
  Matrix components;
  RowVector theta_mean;
  RowVector theta_scale;
  nn::LossProfile losses;

  [[nodiscard]] int embed_dim() const noexcept { return spec.out_dim; }
  /// Summaries of y rows (n x embed_dim).
  [[nodiscard]] Matrix operator()(const Matrix& y) const;
  /// Regression targets for theta rows (n x embed_dim).
  [[nodiscard]] Matrix targets(const Matrix& theta_flat) const;
  [[nodiscard]] SummaryFn as_function() const;
};

/// Simulates n_sims pairs from the prior and fits the regression by MSE.
/// Throws ConfigError unless 1 <= embed_dim <= prior.total_dim().
RegressionSummary regression_summary_train(const PriorSpec& prior, const Simulator& simulator, RngKey key,
                                           Eigen::Index n_sims, int embed_dim, std::vector<int> hidden_sizes,
                                           const nn::FitConfig& fit = {});

nlohmann::json regression_summary_to_json(const RegressionSummary& s);
RegressionSummary regression_summary_from_json(const nlohmann::json& j);

}  // namespace sbi::summaries
