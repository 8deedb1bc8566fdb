#include "sbi/models/models.hpp"

#include <cmath>
#include <numbers>

#include "sbi/core/errors.hpp"

namespace sbi::models {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

double normal_lp(double x, double mu, double sd) {
  const double z = (x - mu) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * kLog2Pi;
}

}  // namespace

Matrix BenchmarkModel::simulate(RngKey key, const ThetaBatch& theta) const {
  Matrix y = simulator(key, theta);
  if (y.rows() != theta.rows() || y.cols() != y_dim)
    throw ContractError("model '" + name + "': simulator returned the wrong shape");
  return y;
}

BenchmarkModel gaussian_model() {
  BenchmarkModel m;
  m.name = "gaussian";
  m.prior.add("mean", Distribution::normal(2, 0.0, 1.0)).add("scale", Distribution::half_normal(1, 1.0));
  m.y_dim = 2;
  m.simulator = [](RngKey key, const ThetaBatch& theta) {
    const Matrix& mean = theta.at("mean");
    const Matrix& scale = theta.at("scale");
    Generator gen(key);
    Matrix y(mean.rows(), 2);
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      for (Eigen::Index j = 0; j < 2; ++j) y(i, j) = mean(i, j) + scale(i, 0) * gen.normal();
    return y;
  };
  m.log_likelihood = [](const Vector& th, const Vector& y) {
    if (!(th[2] > 0.0)) return -std::numeric_limits<double>::infinity();
    return normal_lp(y[0], th[0], th[2]) + normal_lp(y[1], th[1], th[2]);
  };
  return m;
}

Vector slcp_observation() {
  Vector y(8);
  y << -0.9707123, -2.9461224, -0.4494722, -3.4231849, -0.1328563, -3.3640170, -0.8536759, -2.4271638;
  return y;
}

BenchmarkModel slcp_model() {
  BenchmarkModel m;
  m.name = "slcp";
  m.prior.add("theta", Distribution::uniform(5, -3.0, 3.0));
  m.y_dim = 8;
  m.observation = slcp_observation();
  m.simulator = [](RngKey key, const ThetaBatch& theta) {
    const Matrix& th = theta.at("theta");
    Generator gen(key);
    Matrix y(th.rows(), 8);
    for (Eigen::Index i = 0; i < th.rows(); ++i) {
      const double s0 = th(i, 2) * th(i, 2);
      const double s1 = th(i, 3) * th(i, 3);
      const double r = std::tanh(th(i, 4));
      for (int k = 0; k < 4; ++k) {
        const double u0 = gen.normal();
        const double u1 = gen.normal();
        y(i, 2 * k) = s0 * u0 + th(i, 0);
        y(i, 2 * k + 1) = s1 * (r * u0 + std::sqrt(1.0 - r * r) * u1) + th(i, 1);
      }
    }
    return y;
  };
  m.log_likelihood = [](const Vector& th, const Vector& y) {
    const double s0 = th[2] * th[2];
    const double s1 = th[3] * th[3];
    const double r = std::tanh(th[4]);
    const double one_minus = 1.0 - r * r;
    if (!(s0 > 0.0 && s1 > 0.0 && one_minus > 0.0)) return -std::numeric_limits<double>::infinity();
    double total = 0.0;
    for (int k = 0; k < 4; ++k) {
      const double z0 = (y[2 * k] - th[0]) / s0;
      const double z1 = (y[2 * k + 1] - th[1]) / s1;
      total += -kLog2Pi - std::log(s0) - std::log(s1) - 0.5 * std::log(one_minus) -
               (z0 * z0 - 2.0 * r * z0 * z1 + z1 * z1) / (2.0 * one_minus);
    }
    return total;
  };
  return m;
}

BenchmarkModel mixture_model() {
  BenchmarkModel m;
  m.name = "mixture";
  m.prior.add("theta", Distribution::normal(2, 0.0, 1.0));
  m.y_dim = 2;
  Vector obs(2);
  obs << -1.0, 1.0;
  m.observation = obs;
  m.simulator = [](RngKey key, const ThetaBatch& theta) {
    const Matrix& th = theta.at("theta");
    Generator data(fold_in(key, 0));
    Generator cat(fold_in(key, 1));
    Matrix y(th.rows(), 2);
    for (Eigen::Index i = 0; i < th.rows(); ++i) {
      const double scale = cat.below(2) == 0 ? 1.0 : 0.1;
      for (Eigen::Index j = 0; j < 2; ++j) y(i, j) = th(i, j) + scale * data.normal();
    }
    return y;
  };
  m.log_likelihood = [](const Vector& th, const Vector& y) {
    const double wide = normal_lp(y[0], th[0], 1.0) + normal_lp(y[1], th[1], 1.0);
    const double narrow = normal_lp(y[0], th[0], 0.1) + normal_lp(y[1], th[1], 0.1);
    const double hi = std::max(wide, narrow);
    return hi + std::log(0.5 * std::exp(wide - hi) + 0.5 * std::exp(narrow - hi));
  };
  return m;
}

void SolarDynamoConfig::validate() const {
  if (n_steps < 1) throw ConfigError("solar dynamo: n_steps must be >= 1");
  if (!(w1 > 0.0 && w2 > 0.0)) throw ConfigError("solar dynamo: widths must be positive");
  if (prior_lo.size() != 3 || prior_hi.size() != 3) throw ConfigError("solar dynamo: prior box needs 3 bounds");
  for (std::size_t i = 0; i < 3; ++i)
    if (!(prior_lo[i] < prior_hi[i])) throw ConfigError("solar dynamo: prior box needs lo < hi");
  if (prior_lo[1] < 0.0 || prior_lo[2] < 0.0) throw ConfigError("solar dynamo: theta_2 and theta_3 must be >= 0");
}

void to_json(nlohmann::json& j, const SolarDynamoConfig& c) {
  j = nlohmann::json{{"n_steps", c.n_steps}, {"b1", c.b1}, {"w1", c.w1},
                     {"b2", c.b2},           {"w2", c.w2}, {"y0", c.y0},
                     {"prior_lo", c.prior_lo}, {"prior_hi", c.prior_hi}};
}

void from_json(const nlohmann::json& j, SolarDynamoConfig& c) {
  const SolarDynamoConfig d;
  c.n_steps = j.value("n_steps", d.n_steps);
  c.b1 = j.value("b1", d.b1);
  c.w1 = j.value("w1", d.w1);
  c.b2 = j.value("b2", d.b2);
  c.w2 = j.value("w2", d.w2);
  c.y0 = j.value("y0", d.y0);
  c.prior_lo = j.value("prior_lo", d.prior_lo);
  c.prior_hi = j.value("prior_hi", d.prior_hi);
  c.validate();
}

double dynamo_f(const SolarDynamoConfig& c, double y) {
  return 0.5 * (1.0 + std::erf((y - c.b1) / c.w1)) * (1.0 - std::erf((y - c.b2) / c.w2));
}

BenchmarkModel solar_dynamo_model(const SolarDynamoConfig& c) {
  c.validate();
  BenchmarkModel m;
  m.name = "solar_dynamo";
  Uniform box{Eigen::Map<const Vector>(c.prior_lo.data(), 3), Eigen::Map<const Vector>(c.prior_hi.data(), 3)};
  m.prior.add("theta", Distribution(box));
  m.y_dim = c.n_steps;
  m.simulator = [c](RngKey key, const ThetaBatch& theta) {
    const Matrix& th = theta.at("theta");
    Generator gen(key);
    Matrix y(th.rows(), c.n_steps);
    for (Eigen::Index i = 0; i < th.rows(); ++i) {
      double state = c.y0;
      for (int t = 0; t < c.n_steps; ++t) {
        const double alpha = th(i, 0) + th(i, 1) * gen.uniform();
        const double eps = th(i, 2) * gen.uniform();
        state = alpha * dynamo_f(c, state) * state + eps;
        y(i, t) = state;
      }
    }
    return y;
  };
  return m;
}

BenchmarkModel model_by_name(const std::string& name, const nlohmann::json& options) {
  if (name == "gaussian") return gaussian_model();
  if (name == "slcp") return slcp_model();
  if (name == "mixture") return mixture_model();
  if (name == "solar_dynamo") return solar_dynamo_model(options.is_null() ? SolarDynamoConfig{} : options.get<SolarDynamoConfig>());
  throw ConfigError("unknown model '" + name + "' (expected gaussian, slcp, mixture or solar_dynamo)");
}

std::vector<std::string> model_names() { return {"gaussian", "slcp", "mixture", "solar_dynamo"}; }

}  // namespace sbi::models
