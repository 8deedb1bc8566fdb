#pragma once

#include <functional>

#include <nlohmann/json.hpp>

#include "sbi/core/rng.hpp"
#include "sbi/ndnet/autodiff.hpp"
#include "sbi/ndnet/mlp.hpp"

namespace sbi::cnf {

using nn::NetParams;
using nn::Tensor;
using nn::Var;
using nn::VarParams;

enum class Solver { euler, heun };

/// Continuous flow on theta driven by a vector field network v(theta_t, t,
/// context), trained by conditional flow matching along the optimal-transport
/// path theta_t = t theta_1 + (1 - (1 - sigma_min) t) eps.
struct CnfSpec {
  int theta_dim = 1;
  int context_dim = 0;
  std::vector<int> hidden_sizes{64, 64};
  nn::Activation activation = nn::Activation::tanh;
  double sigma_min = 1e-3;
  int ode_steps = 64;
  Solver solver = Solver::heun;

  void validate() const;
  /// MLP on [theta_t, t, context].
  [[nodiscard]] nn::MlpSpec field_spec() const;
};

void to_json(nlohmann::json& j, const CnfSpec& s);
void from_json(const nlohmann::json& j, CnfSpec& s);

NetParams cnf_init(const CnfSpec& spec, RngKey key, const std::string& prefix = "cnf");

/// `t` is n x 1 with entries in [0, 1].
Var vector_field(const CnfSpec& spec, const VarParams& params, const Var& theta_t, const Var& t, const Var& context,
                 const std::string& prefix = "cnf");
Tensor vector_field(const CnfSpec& spec, const NetParams& params, const Tensor& theta_t, const Vector& t,
                    const Tensor& context);

/// theta_t = t theta_1 + (1 - (1 - sigma_min) t) eps, row-wise t.
Tensor ot_path_sample(const Tensor& theta1, const Vector& t, const Tensor& eps, double sigma_min);

/// (theta_1 - (1 - sigma_min) theta_t) / max(1 - (1 - sigma_min) t, 1e-6).
Tensor target_field(const Tensor& theta_t, const Tensor& theta1, const Vector& t, double sigma_min);

/// Field evaluated inside the loss: (theta_t, t, context) -> n x theta_dim.
using FieldVar = std::function<Var(const Var& theta_t, const Var& t, const Var& context)>;

/// Mean over rows of ||v(theta_t, t) - u(theta_t | theta_1)||^2, with one
/// (t ~ U(0,1), eps ~ N(0, I)) draw per row from `key`.
Var cfm_loss(const FieldVar& field, const Tensor& theta1, const Tensor& context, double sigma_min, RngKey key);
Var cfm_loss(const CnfSpec& spec, const VarParams& params, const Tensor& theta1, const Tensor& context, RngKey key);

/// A time-dependent field with its exact divergence, for the integrators.
struct FieldFns {
  std::function<Tensor(const Tensor& theta, double t)> value;
  std::function<Vector(const Tensor& theta, double t)> divergence;
};

/// Network field bound to a context (1 row shared, or one row per state).
FieldFns network_field(const CnfSpec& spec, const NetParams& params, const Tensor& context);

/// Integrates d theta/dt = v from t = 0 to 1.
Tensor integrate_forward(const FieldFns& field, Tensor theta0, int steps, Solver solver);
/// log q_1(theta) = log N(theta_0; 0, I) - int_0^1 div v dt, integrating the
/// state and the divergence backward from t = 1.
Vector integrate_log_prob(const FieldFns& field, const Tensor& theta1, int steps, Solver solver);

Tensor cnf_sample(const CnfSpec& spec, const NetParams& params, RngKey key, const Tensor& context, Eigen::Index n);
Vector cnf_log_prob(const CnfSpec& spec, const NetParams& params, const Tensor& theta, const Tensor& context);

}  // namespace sbi::cnf
