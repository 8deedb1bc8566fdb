#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbi/cnf/cnf.hpp"
#include "sbi/core/dataset.hpp"
#include "sbi/core/simulator.hpp"
#include "sbi/flows/density.hpp"
#include "sbi/mcmc/chains.hpp"
#include "sbi/mcmc/diagnostics.hpp"
#include "sbi/mcmc/samplers.hpp"
#include "sbi/ndnet/optim.hpp"
#include "sbi/ratio/nre.hpp"

namespace sbi::engines {

using nn::NetParams;

enum class EngineKind { nle, npe, fmpe, nre };

std::string to_string(EngineKind k);
EngineKind engine_kind_from_string(const std::string& name);

/// Neural estimator behind an engine: a conditional density (nle, npe), a
/// continuous flow (fmpe) or a ratio classifier (nre).
using EstimatorSpec = std::variant<flows::MafSpec, flows::MdnSpec, cnf::CnfSpec, ratio::NreSpec>;

/// {"type": "maf" | "mdn" | "cnf" | "nre", ...fields}.
nlohmann::json estimator_to_json(const EstimatorSpec& spec);
EstimatorSpec estimator_from_json(const nlohmann::json& j);

/// MAF for nle/npe, CNF for fmpe, the contrastive classifier for nre, with
/// default hyperparameters and dimensions filled in.
EstimatorSpec default_estimator(EngineKind kind, int theta_dim, int y_dim);

/// Immutable description of an inference problem and its estimator. All
/// mutable state lives in explicit params and datasets.
class Engine {
 public:
  /// Runs one probe simulation (from `probe_key`) to learn the data width
  /// and checks the estimator dimensions. Throws ConfigError on mismatches.
  Engine(EngineKind kind, PriorSpec prior, Simulator simulator, EstimatorSpec estimator,
         mcmc::SamplerConfig sampler = {}, RngKey probe_key = make_key(0));

  [[nodiscard]] EngineKind kind() const noexcept { return kind_; }
  [[nodiscard]] const PriorSpec& prior() const noexcept { return prior_; }
  [[nodiscard]] const Simulator& simulator() const noexcept { return simulator_; }
  [[nodiscard]] const EstimatorSpec& estimator() const noexcept { return estimator_; }
  [[nodiscard]] const mcmc::SamplerConfig& sampler() const noexcept { return sampler_; }
  [[nodiscard]] int theta_dim() const noexcept { return prior_.total_dim(); }
  [[nodiscard]] int y_dim() const noexcept { return y_dim_; }

  /// {"kind", "estimator", "sampler"}.
  [[nodiscard]] nlohmann::json to_json() const;

 private:
  EngineKind kind_;
  PriorSpec prior_;
  Simulator simulator_;
  EstimatorSpec estimator_;
  mcmc::SamplerConfig sampler_;
  int y_dim_ = 0;
};

/// Prefix of the standardization entries stored alongside the network
/// weights: <prefix>theta_mean, theta_scale, y_mean, y_scale (each 1 x d).
inline constexpr const char* kStandardizePrefix = "standardize/";

/// Fresh network weights (no standardization entries).
NetParams init_params(const Engine& e, RngKey key);

/// Bijection between the prior support and R^d, coordinate by coordinate:
/// identity on the real line, log on (0, inf), scaled logit on (lo, hi).
class Reparam {
 public:
  /// Throws ContractError for discrete coordinates.
  explicit Reparam(const PriorSpec& prior);

  [[nodiscard]] Vector to_unconstrained(const Vector& theta) const;
  [[nodiscard]] Vector to_constrained(const Vector& u) const;
  /// log |d theta / d u|.
  [[nodiscard]] double log_jacobian(const Vector& u) const;
  /// Wraps a density on theta into a density on u, including the Jacobian.
  [[nodiscard]] mcmc::LogDensity pullback(const mcmc::LogDensity& log_density_theta) const;

 private:
  std::vector<Support> supports_;
};

/// log q(y_obs | theta) + log prior (nle) or log h(y_obs, theta) + log prior
/// (nre), as a function of one flattened theta. Throws ContractError for
/// npe/fmpe.
mcmc::LogDensity surrogate_log_posterior(const Engine& e, const NetParams& params, const Vector& observable);

/// MCMC on a log density over flattened theta, run in the unconstrained
/// space of `prior`. Chain c starts from the first of up to 100 prior draws
/// with a finite target; NumericError if none exists. Draws are mapped back
/// to theta.
mcmc::ChainSet mcmc_posterior(const PriorSpec& prior, const mcmc::LogDensity& log_density, RngKey key,
                              const mcmc::SamplerConfig& cfg);

struct InferenceResult {
  EngineKind kind = EngineKind::nle;
  mcmc::ChainSet posterior;
  Vector observed;
  /// Full diagnostics for nle/nre; ESS only (empty split_rhat) for npe/fmpe.
  mcmc::Diagnostics diagnostics;
  /// Fraction of direct draws outside the prior support (npe/fmpe).
  double support_rejection_rate = 0.0;
};

/// Posterior draws given y_obs. MCMC engines run sampler().n_chains chains of
/// ceil(n_samples / n_chains) draws each; direct samplers return one chain of
/// n_samples draws. Throws ContractError for n_samples < 1 or a wrong
/// observable width.
InferenceResult sample_posterior(const Engine& e, RngKey key, const NetParams& params, const Vector& observable,
                                 Eigen::Index n_samples);

/// n (theta, y) pairs, theta from the prior when `params` is empty and from
/// the surrogate posterior given `observable` otherwise.
Dataset simulate_data(const Engine& e, RngKey key, Eigen::Index n_simulations, const NetParams& params = {},
                      const std::optional<Vector>& observable = std::nullopt);

/// Trains the engine's estimator on `data` (non-finite rows dropped) with
/// standardized theta and y. `warm_start` seeds the network weights; new
/// standardization statistics are always computed from `data`.
nn::FitResult fit(const Engine& e, RngKey key, const Dataset& data, const nn::FitConfig& cfg,
                  const std::optional<NetParams>& warm_start = std::nullopt);

struct SequentialResult {
  NetParams params;
  Dataset data;
  /// Loss profile of each round's fit.
  std::vector<nn::LossProfile> losses;
};

/// Per round r: simulate n_per_round pairs from the current surrogate (the
/// prior in round 1) given `observable`, stack them onto the data, refit on
/// everything. Round r uses fold_in(key, r).
SequentialResult sequential_run(const Engine& e, RngKey key, const Vector& observable, int n_rounds,
                                Eigen::Index n_per_round, const nn::FitConfig& cfg, bool warm_start = true);

/// Chains as CSV plus a JSON sidecar with the engine kind, observable and
/// diagnostics. Non-finite diagnostics are written as null.
nlohmann::json inference_metadata(const InferenceResult& r);
void write_inference_result(const std::string& csv_path, const std::string& json_path, const InferenceResult& r,
                            const nlohmann::json& extra = nlohmann::json::object());

}  // namespace sbi::engines
