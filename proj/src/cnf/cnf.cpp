#include "sbi/cnf/cnf.hpp"

#include <cmath>
#include <numbers>

#include "sbi/core/errors.hpp"

namespace sbi::cnf {

namespace {

constexpr double kDenomFloor = 1e-6;

Tensor broadcast_rows(const Tensor& context, Eigen::Index n, int context_dim) {
  if (context_dim == 0) return Tensor(n, 0);
  if (context.cols() != context_dim) throw ContractError("CNF: context has the wrong width");
  if (context.rows() == n) return context;
  if (context.rows() != 1) throw ContractError("CNF: context must have 1 or n rows");
  return context.replicate(n, 1);
}

// Activation derivative written in terms of the pre-activation.
Tensor activation_grad(nn::Activation a, const Tensor& pre) {
  switch (a) {
    case nn::Activation::identity: return Tensor::Ones(pre.rows(), pre.cols());
    case nn::Activation::tanh: return (1.0 - pre.array().tanh().square()).matrix();
    case nn::Activation::relu: return (pre.array() > 0.0).cast<double>().matrix();
    case nn::Activation::gelu:
      return pre.unaryExpr([](double x) {
        const double cdf = 0.5 * std::erfc(-x / std::numbers::sqrt2);
        const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
        return cdf + x * pdf;
      });
  }
  return pre;
}

Tensor activate(nn::Activation a, const Tensor& pre) { return nn::apply(a, Var(pre)).value(); }

void check_state(const Tensor& theta, int step, const char* what) {
  if (!theta.allFinite())
    throw NumericError(std::string(what) + ": non-finite state at integration step " + std::to_string(step));
}

}  // namespace

void CnfSpec::validate() const {
  if (theta_dim < 1 || context_dim < 0) throw ConfigError("CnfSpec: invalid dimensions");
  if (!(sigma_min > 0.0 && sigma_min < 1.0)) throw ConfigError("CnfSpec: sigma_min must lie in (0, 1)");
  if (ode_steps < 2) throw ConfigError("CnfSpec: ode_steps must be >= 2");
  for (int h : hidden_sizes)
    if (h < 1) throw ConfigError("CnfSpec: hidden sizes must be >= 1");
}

nn::MlpSpec CnfSpec::field_spec() const {
  return nn::MlpSpec{theta_dim + 1 + context_dim, theta_dim, hidden_sizes, activation, {}};
}

void to_json(nlohmann::json& j, const CnfSpec& s) {
  j = nlohmann::json{{"theta_dim", s.theta_dim},
                     {"context_dim", s.context_dim},
                     {"hidden_sizes", s.hidden_sizes},
                     {"activation", nn::to_string(s.activation)},
                     {"sigma_min", s.sigma_min},
                     {"ode_steps", s.ode_steps},
                     {"solver", s.solver == Solver::heun ? "heun" : "euler"}};
}

void from_json(const nlohmann::json& j, CnfSpec& s) {
  s.theta_dim = j.at("theta_dim").get<int>();
  s.context_dim = j.value("context_dim", 0);
  s.hidden_sizes = j.value("hidden_sizes", std::vector<int>{64, 64});
  s.activation = nn::activation_from_string(j.value("activation", std::string("tanh")));
  s.sigma_min = j.value("sigma_min", 1e-3);
  s.ode_steps = j.value("ode_steps", 64);
  const auto solver = j.value("solver", std::string("heun"));
  if (solver != "heun" && solver != "euler") throw ConfigError("unknown ODE solver '" + solver + "'");
  s.solver = solver == "heun" ? Solver::heun : Solver::euler;
  s.validate();
}

NetParams cnf_init(const CnfSpec& spec, RngKey key, const std::string& prefix) {
  spec.validate();
  return nn::mlp_init(spec.field_spec(), key, prefix);
}

Var vector_field(const CnfSpec& spec, const VarParams& params, const Var& theta_t, const Var& t, const Var& context,
                 const std::string& prefix) {
  if (theta_t.cols() != spec.theta_dim) throw ContractError("vector_field: theta has the wrong width");
  if (t.cols() != 1 || t.rows() != theta_t.rows()) throw ContractError("vector_field: t must be n x 1");
  if (context.cols() != spec.context_dim || (spec.context_dim > 0 && context.rows() != theta_t.rows()))
    throw ContractError("vector_field: context shape mismatch");
  const Var in = spec.context_dim > 0 ? nn::concat_cols({theta_t, t, context}) : nn::concat_cols({theta_t, t});
  return nn::mlp_forward(spec.field_spec(), params, prefix, in);
}

Tensor vector_field(const CnfSpec& spec, const NetParams& params, const Tensor& theta_t, const Vector& t,
                    const Tensor& context) {
  return vector_field(spec, nn::as_constants(params), Var(theta_t), Var(Tensor(t)),
                      Var(broadcast_rows(context, theta_t.rows(), spec.context_dim)))
      .value();
}

Tensor ot_path_sample(const Tensor& theta1, const Vector& t, const Tensor& eps, double sigma_min) {
  if (eps.rows() != theta1.rows() || eps.cols() != theta1.cols() || t.size() != theta1.rows())
    throw ContractError("ot_path_sample: shape mismatch");
  const Vector scale = (1.0 - (1.0 - sigma_min) * t.array()).matrix();
  return (theta1.array().colwise() * t.array() + eps.array().colwise() * scale.array()).matrix();
}

Tensor target_field(const Tensor& theta_t, const Tensor& theta1, const Vector& t, double sigma_min) {
  if (theta_t.rows() != theta1.rows() || theta_t.cols() != theta1.cols() || t.size() != theta1.rows())
    throw ContractError("target_field: shape mismatch");
  const Vector denom = (1.0 - (1.0 - sigma_min) * t.array()).max(kDenomFloor).matrix();
  return ((theta1 - (1.0 - sigma_min) * theta_t).array().colwise() / denom.array()).matrix();
}

Var cfm_loss(const FieldVar& field, const Tensor& theta1, const Tensor& context, double sigma_min, RngKey key) {
  const Eigen::Index n = theta1.rows();
  if (n == 0) throw ContractError("cfm_loss: empty batch");
  Generator gen(key);
  Vector t(n);
  Tensor eps(n, theta1.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    t[i] = gen.uniform();
    for (Eigen::Index j = 0; j < theta1.cols(); ++j) eps(i, j) = gen.normal();
  }
  const Tensor theta_t = ot_path_sample(theta1, t, eps, sigma_min);
  const Tensor u = target_field(theta_t, theta1, t, sigma_min);
  const Var v = field(Var(theta_t), Var(Tensor(t)), Var(context));
  return nn::mean(nn::row_sum(nn::square(v - Var(u))));
}

Var cfm_loss(const CnfSpec& spec, const VarParams& params, const Tensor& theta1, const Tensor& context, RngKey key) {
  const Tensor ctx = broadcast_rows(context, theta1.rows(), spec.context_dim);
  return cfm_loss([&](const Var& th, const Var& t, const Var& c) { return vector_field(spec, params, th, t, c); },
                  theta1, ctx, spec.sigma_min, key);
}

FieldFns network_field(const CnfSpec& spec, const NetParams& params, const Tensor& context) {
  const nn::MlpSpec mlp = spec.field_spec();
  auto inputs = [spec, context](const Tensor& theta, double t) {
    const Eigen::Index n = theta.rows();
    Tensor in(n, spec.theta_dim + 1 + spec.context_dim);
    in.leftCols(spec.theta_dim) = theta;
    in.col(spec.theta_dim).setConstant(t);
    if (spec.context_dim > 0) in.rightCols(spec.context_dim) = broadcast_rows(context, n, spec.context_dim);
    return in;
  };
  FieldFns f;
  f.value = [=](const Tensor& theta, double t) {
    return nn::mlp_forward(mlp, params, inputs(theta, t), "cnf");
  };
  // Exact trace of d v / d theta by forward-mode tangents, one pass per
  // theta coordinate.
  f.divergence = [=](const Tensor& theta, double t) {
    const Tensor in = inputs(theta, t);
    const Eigen::Index n = theta.rows();
    const int last = mlp.n_linear() - 1;
    std::vector<Tensor> pre;  // pre-activations of hidden layers
    Tensor h = in;
    for (int l = 0; l < last; ++l) {
      const std::string base = "cnf/linear_" + std::to_string(l);
      Tensor z = h * nn::param(params, base + "/w");
      z.rowwise() += nn::param(params, base + "/b").row(0);
      pre.push_back(z);
      h = activate(mlp.activation, z);
    }
    std::vector<Tensor> act_grads;
    for (const auto& z : pre) act_grads.push_back(activation_grad(mlp.activation, z));
    Vector div = Vector::Zero(n);
    for (int j = 0; j < spec.theta_dim; ++j) {
      // Tangent of the first pre-activation is row j of the first weight.
      Tensor tan = nn::param(params, "cnf/linear_0/w").row(j).replicate(n, 1);
      for (int l = 0; l < last; ++l) {
        tan = tan.cwiseProduct(act_grads[static_cast<std::size_t>(l)]);
        tan = tan * nn::param(params, "cnf/linear_" + std::to_string(l + 1) + "/w");
      }
      div += tan.col(j);
    }
    return div;
  };
  return f;
}

Tensor integrate_forward(const FieldFns& field, Tensor theta, int steps, Solver solver) {
  if (steps < 1) throw ContractError("integrate_forward: steps must be >= 1");
  const double dt = 1.0 / steps;
  for (int k = 0; k < steps; ++k) {
    const double t = k * dt;
    const Tensor v0 = field.value(theta, t);
    if (solver == Solver::euler) {
      theta += dt * v0;
    } else {
      const Tensor pred = theta + dt * v0;
      theta += 0.5 * dt * (v0 + field.value(pred, t + dt));
    }
    check_state(theta, k + 1, "cnf_sample");
  }
  return theta;
}

Vector integrate_log_prob(const FieldFns& field, const Tensor& theta1, int steps, Solver solver) {
  if (steps < 1) throw ContractError("integrate_log_prob: steps must be >= 1");
  if (!theta1.allFinite()) throw ContractError("cnf_log_prob: theta must be finite");
  const double dt = 1.0 / steps;
  Tensor theta = theta1;
  Vector div_integral = Vector::Zero(theta.rows());
  for (int k = steps; k > 0; --k) {
    const double t = k * dt;
    const Tensor v0 = field.value(theta, t);
    const Vector d0 = field.divergence(theta, t);
    if (solver == Solver::euler) {
      theta -= dt * v0;
      div_integral += dt * d0;
    } else {
      const Tensor pred = theta - dt * v0;
      theta -= 0.5 * dt * (v0 + field.value(pred, t - dt));
      div_integral += 0.5 * dt * (d0 + field.divergence(pred, t - dt));
    }
    check_state(theta, steps - k + 1, "cnf_log_prob");
  }
  const double c = -0.5 * static_cast<double>(theta.cols()) * std::log(2.0 * std::numbers::pi);
  return (-0.5 * theta.rowwise().squaredNorm().array() + c).matrix() - div_integral;
}

Tensor cnf_sample(const CnfSpec& spec, const NetParams& params, RngKey key, const Tensor& context, Eigen::Index n) {
  spec.validate();
  if (n < 1) throw ContractError("cnf_sample: n must be >= 1");
  Generator gen(key);
  Tensor theta0(n, spec.theta_dim);
  for (Eigen::Index i = 0; i < theta0.size(); ++i) theta0.data()[i] = gen.normal();
  return integrate_forward(network_field(spec, params, broadcast_rows(context, n, spec.context_dim)), theta0,
                           spec.ode_steps, spec.solver);
}

Vector cnf_log_prob(const CnfSpec& spec, const NetParams& params, const Tensor& theta, const Tensor& context) {
  spec.validate();
  if (theta.cols() != spec.theta_dim) throw ContractError("cnf_log_prob: theta has the wrong width");
  return integrate_log_prob(network_field(spec, params, broadcast_rows(context, theta.rows(), spec.context_dim)),
                            theta, spec.ode_steps, spec.solver);
}

}  // namespace sbi::cnf
