#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbi/core/simulator.hpp"

namespace sbi::abc {

enum class KernelKind { indicator, gaussian, epanechnikov };

std::string to_string(KernelKind k);
KernelKind kernel_kind_from_string(const std::string& name);

/// Symmetric smoothing kernel K_eps(u) = K(u / eps) / eps. The indicator is
/// uniform on |u| <= eps, so over distances it is flat on [0, eps].
struct KernelSpec {
  KernelKind kind = KernelKind::indicator;
  double epsilon = 1.0;
};

double kernel_eval(const KernelSpec& k, double u);

struct RejectionConfig {
  /// Acceptance with probability K_eps(d) / K_eps(0) instead of d < eps.
  std::optional<KernelKind> kernel;
  Eigen::Index batch_size = 1000;
  /// Total simulation budget.
  Eigen::Index max_simulations = 10'000'000;
  /// Give up early once this many simulations show a rate below 1e-6.
  Eigen::Index rate_check_after = 1'000'000;
};

/// Draws theta from the prior in batches (batch b uses fold_in(key, b)) and
/// keeps the first n_accept accepted draws in simulation order. Throws
/// BudgetExhausted, reporting the acceptance rate, when the budget runs out.
ThetaBatch rejection_abc(const PriorSpec& prior, const Simulator& simulator, const SummaryFn& summary,
                         const DistanceFn& distance, const Vector& y_obs, RngKey key, Eigen::Index n_accept,
                         double epsilon, const RejectionConfig& cfg = {});

enum class Transition { gaussian_rw, prior };

struct SmcConfig {
  int n_particles = 1000;
  int n_rounds = 10;
  double eps_decay = 0.8;
  double ess_threshold = 0.5;
  int max_tries_per_particle = 1000;
  /// indicator accepts on d < eps; other kinds accept with K_eps(d) / K_eps(0).
  KernelKind kernel = KernelKind::indicator;
  Transition transition = Transition::gaussian_rw;
  /// Random-walk covariance = scale x weighted particle covariance.
  double rw_cov_scale = 2.0;
  /// Replaces min_n d(s_n^0, s_obs) as the first threshold when set.
  std::optional<double> initial_epsilon;

  void validate() const;
};

void to_json(nlohmann::json& j, const SmcConfig& c);
void from_json(const nlohmann::json& j, SmcConfig& c);

struct ParticleSet {
  ThetaBatch thetas;
  Vector weights;
  double epsilon = 0.0;
  int round = 0;
};

struct RoundStats {
  double epsilon = 0.0;
  /// Accepted proposals over proposals made (including out-of-support ones).
  double acceptance_rate = 0.0;
  int n_exhausted = 0;
  /// ESS of the weights before any resampling.
  double ess = 0.0;
  /// Sum of the normalized weights before resampling.
  double weight_sum = 0.0;
  bool resampled = false;
};

struct SmcResult {
  ParticleSet particles;
  std::vector<RoundStats> rounds;

  [[nodiscard]] std::vector<double> epsilon_trace() const;
  /// Weighted mean of the flattened particles.
  [[nodiscard]] RowVector weighted_mean() const;
};

SmcResult smc_abc(const PriorSpec& prior, const Simulator& simulator, const SummaryFn& summary,
                  const DistanceFn& distance, const Vector& y_obs, RngKey key, const SmcConfig& cfg);

/// Header "round,epsilon,acceptance_rate,n_exhausted,ess,weight_sum,resampled".
void write_smc_trace_csv(std::ostream& out, const SmcResult& r);
void write_smc_trace_csv(const std::string& path, const SmcResult& r);

/// (sum w)^2 / sum w^2.
double ess_of_weights(const Vector& w);

/// N indices drawn with one uniform offset u ~ U(0, 1/N) at u + i/N against
/// the normalized cumulative weights.
std::vector<Eigen::Index> systematic_resample(const Vector& w, RngKey key);

}  // namespace sbi::abc
