#include "sbi/summaries/summaries.hpp"

#include <Eigen/Eigenvalues>

#include "sbi/core/errors.hpp"
#include "sbi/ndnet/params_io.hpp"

namespace sbi::summaries {

Matrix identity_summary(const Matrix& y) { return y; }

Vector euclidean_distance(const Matrix& s_sim, const Vector& s_obs) {
  if (s_sim.cols() != s_obs.size()) throw ContractError("euclidean_distance: summary widths differ");
  return (s_sim.rowwise() - s_obs.transpose()).rowwise().norm();
}

namespace {

RowVector safe_scale(const Matrix& x, const RowVector& mean) {
  RowVector sd = ((x.rowwise() - mean).array().square().colwise().mean()).sqrt().matrix();
  for (Eigen::Index j = 0; j < sd.size(); ++j)
    if (!(sd[j] > 1e-12)) sd[j] = 1.0;
  return sd;
}

Matrix standardize(const Matrix& x, const RowVector& mean, const RowVector& scale) {
  return ((x.rowwise() - mean).array().rowwise() / scale.array()).matrix();
}

}  // namespace

Matrix RegressionSummary::operator()(const Matrix& y) const {
  if (y.cols() != y_mean.size()) throw ContractError("regression summary: y has the wrong width");
  return nn::mlp_forward(spec, params, standardize(y, y_mean, y_scale), "summary");
}

Matrix RegressionSummary::targets(const Matrix& theta_flat) const {
  return standardize(theta_flat, theta_mean, theta_scale) * components;
}

SummaryFn RegressionSummary::as_function() const {
  return [self = *this](const Matrix& y) { return self(y); };
}

RegressionSummary regression_summary_train(const PriorSpec& prior, const Simulator& simulator, RngKey key,
                                           Eigen::Index n_sims, int embed_dim, std::vector<int> hidden_sizes,
                                           const nn::FitConfig& fit) {
  if (embed_dim < 1 || embed_dim > prior.total_dim())
    throw ConfigError("regression summary: embed_dim must lie in [1, theta_dim]");
  const ThetaBatch theta = prior_sample(prior, fold_in(key, 0), n_sims);
  Dataset d;
  d.y = simulator(fold_in(key, 1), theta);
  d.theta = theta;
  drop_nonfinite(d);

  RegressionSummary s;
  const Matrix flat = d.theta.flatten();
  s.theta_mean = flat.colwise().mean();
  s.theta_scale = safe_scale(flat, s.theta_mean);
  s.y_mean = d.y.colwise().mean();
  s.y_scale = safe_scale(d.y, s.y_mean);
  const Matrix z = standardize(flat, s.theta_mean, s.theta_scale);
  const Matrix cov = z.transpose() * z / static_cast<double>(z.rows());
  // Eigenvalues come back ascending; take the trailing columns, largest first.
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  s.components = eig.eigenvectors().rightCols(embed_dim).rowwise().reverse();
  // Fix the sign so the largest-magnitude loading is positive.
  for (Eigen::Index k = 0; k < s.components.cols(); ++k) {
    Eigen::Index arg = 0;
    s.components.col(k).cwiseAbs().maxCoeff(&arg);
    if (s.components(arg, k) < 0) s.components.col(k) *= -1.0;
  }
  s.spec = nn::MlpSpec{static_cast<int>(d.y.cols()), embed_dim, std::move(hidden_sizes), nn::Activation::tanh, {}};
  s.spec.validate();

  Dataset train;
  train.y = standardize(d.y, s.y_mean, s.y_scale);
  train.theta.add("target", s.targets(flat));
  const auto& spec = s.spec;
  const nn::Objective mse = [&spec](const nn::VarParams& p, const Dataset& b, RngKey) {
    const nn::Var pred = nn::mlp_forward(spec, p, "summary", nn::Var(b.y));
    return nn::mean(nn::row_sum(nn::square(pred - nn::Var(b.theta.at("target")))));
  };
  auto result = nn::fit_loop(mse, nn::mlp_init(s.spec, fold_in(key, 2), "summary"), train, fold_in(key, 3), fit);
  s.params = std::move(result.params);
  s.losses = std::move(result.losses);
  return s;
}

namespace {

nlohmann::json row_to_json(const RowVector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

RowVector row_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const RowVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::json regression_summary_to_json(const RegressionSummary& s) {
  nlohmann::json meta{{"kind", "regression_summary"},
                      {"mlp", s.spec},
                      {"y_mean", row_to_json(s.y_mean)},
                      {"y_scale", row_to_json(s.y_scale)},
                      {"theta_mean", row_to_json(s.theta_mean)},
                      {"theta_scale", row_to_json(s.theta_scale)},
                      {"components_rows", s.components.rows()},
                      {"components", nn::encode_doubles(s.components.data(), static_cast<std::size_t>(s.components.size()))}};
  return nn::params_to_json(s.params, meta);
}

RegressionSummary regression_summary_from_json(const nlohmann::json& j) {
  auto [params, meta] = nn::params_from_json(j);
  if (meta.value("kind", std::string()) != "regression_summary")
    throw ConfigError("document is not a regression summary");
  RegressionSummary s;
  s.params = std::move(params);
  s.spec = meta.at("mlp").get<nn::MlpSpec>();
  s.y_mean = row_from_json(meta.at("y_mean"));
  s.y_scale = row_from_json(meta.at("y_scale"));
  s.theta_mean = row_from_json(meta.at("theta_mean"));
  s.theta_scale = row_from_json(meta.at("theta_scale"));
  const auto rows = meta.at("components_rows").get<Eigen::Index>();
  const auto values = nn::decode_doubles(meta.at("components").get<std::string>());
  if (rows < 1 || static_cast<Eigen::Index>(values.size()) != rows * s.spec.out_dim)
    throw ConfigError("regression summary: malformed components");
  s.components = Eigen::Map<const Matrix>(values.data(), rows, s.spec.out_dim);
  return s;
}

}  // namespace sbi::summaries
