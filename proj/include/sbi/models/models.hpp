#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbi/core/prior.hpp"
#include "sbi/core/simulator.hpp"
#include "sbi/core/rng.hpp"
#include "sbi/core/types.hpp"

namespace sbi::models {

using sbi::Simulator;
/// log p(y | theta) for one flattened theta and one y.
using LogLikelihood = std::function<double(const Vector& theta, const Vector& y)>;

struct BenchmarkModel {
  std::string name;
  PriorSpec prior;
  Simulator simulator;
  int y_dim = 0;
  std::optional<Vector> observation;
  /// Empty when the likelihood is intractable.
  LogLikelihood log_likelihood;

  /// Simulates and checks the output shape against y_dim.
  [[nodiscard]] Matrix simulate(RngKey key, const ThetaBatch& theta) const;
};

/// mean ~ N2(0, I), scale ~ HalfNormal(1), y ~ N2(mean, scale^2 I).
BenchmarkModel gaussian_model();

/// Five Uniform(-3, 3) parameters drive the mean, scales and correlation of
/// a bivariate normal; y stacks four iid draws (x_1, x_2 interleaved).
BenchmarkModel slcp_model();
/// The published SLCP observation.
Vector slcp_observation();

/// theta ~ N2(0, I), y ~ 0.5 N2(theta, I) + 0.5 N2(theta, 0.1^2 I).
BenchmarkModel mixture_model();

struct SolarDynamoConfig {
  int n_steps = 100;
  double b1 = 1.0;
  double w1 = 0.8;
  double b2 = 7.0;
  double w2 = 0.8;
  double y0 = 1.0;
  /// Prior box for (theta_1, theta_2, theta_3), each uniform.
  std::vector<double> prior_lo{0.9, 0.0, 0.0};
  std::vector<double> prior_hi{1.4, 1.0, 0.2};

  void validate() const;
};

void to_json(nlohmann::json& j, const SolarDynamoConfig& c);
void from_json(const nlohmann::json& j, SolarDynamoConfig& c);

/// 0.5 [1 + erf((y - b1) / w1)] [1 - erf((y - b2) / w2)]. Each bracket lies
/// in [0, 2], so f lies in [0, 2].
double dynamo_f(const SolarDynamoConfig& c, double y);

/// y_{t+1} = alpha_t f(y_t) y_t + eps_t with alpha_t ~ U(theta_1, theta_1 +
/// theta_2) and eps_t ~ U(0, theta_3); y holds y_1..y_T. No tractable likelihood.
BenchmarkModel solar_dynamo_model(const SolarDynamoConfig& c = {});

/// "gaussian", "slcp", "mixture" or "solar_dynamo". `options` configures the
/// dynamo. Throws ConfigError for unknown names.
BenchmarkModel model_by_name(const std::string& name, const nlohmann::json& options = nlohmann::json::object());
std::vector<std::string> model_names();

}  // namespace sbi::models
