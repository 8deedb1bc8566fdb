#include "sbi/ratio/nre.hpp"

#include <cmath>

#include "sbi/core/errors.hpp"

namespace sbi::ratio {

void NreSpec::validate() const {
  if (theta_dim < 1 || y_dim < 1) throw ConfigError("NreSpec: dimensions must be >= 1");
  if (n_contrast < 1) throw ConfigError("NreSpec: n_contrast must be >= 1");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("NreSpec: gamma must be positive");
  for (int h : hidden_sizes)
    if (h < 1) throw ConfigError("NreSpec: hidden sizes must be >= 1");
}

nn::MlpSpec NreSpec::net_spec() const { return nn::MlpSpec{y_dim + theta_dim, 1, hidden_sizes, activation, {}}; }

void to_json(nlohmann::json& j, const NreSpec& s) {
  j = nlohmann::json{{"theta_dim", s.theta_dim},
                     {"y_dim", s.y_dim},
                     {"hidden_sizes", s.hidden_sizes},
                     {"activation", nn::to_string(s.activation)},
                     {"n_contrast", s.n_contrast},
                     {"gamma", s.gamma}};
}

void from_json(const nlohmann::json& j, NreSpec& s) {
  s.theta_dim = j.at("theta_dim").get<int>();
  s.y_dim = j.at("y_dim").get<int>();
  s.hidden_sizes = j.value("hidden_sizes", std::vector<int>{64, 64});
  s.activation = nn::activation_from_string(j.value("activation", std::string("tanh")));
  s.n_contrast = j.value("n_contrast", 5);
  s.gamma = j.value("gamma", 1.0);
  s.validate();
}

NetParams nre_init(const NreSpec& spec, RngKey key, const std::string& prefix) {
  spec.validate();
  return nn::mlp_init(spec.net_spec(), key, prefix);
}

Var log_h(const NreSpec& spec, const VarParams& params, const Var& y, const Var& theta, const std::string& prefix) {
  if (y.cols() != spec.y_dim || theta.cols() != spec.theta_dim || y.rows() != theta.rows())
    throw ContractError("log_h: y must be n x y_dim and theta n x theta_dim");
  return nn::mlp_forward(spec.net_spec(), params, prefix, nn::concat_cols({y, theta}));
}

Vector log_h(const NreSpec& spec, const NetParams& params, const Tensor& y, const Tensor& theta) {
  return log_h(spec, nn::as_constants(params), Var(y), Var(theta)).value().col(0);
}

Var class_log_probs_from_log(const Var& log_h_values, double gamma) {
  const auto n = log_h_values.rows();
  const double log_c = std::log(static_cast<double>(log_h_values.cols()));
  const Var scores = nn::concat_cols({Var(Tensor::Constant(n, 1, log_c)), log_h_values + std::log(gamma)});
  const Var lse = nn::logsumexp_rows(scores);
  return nn::add_col(scores, -lse);
}

Tensor class_log_probs(const Tensor& h_values, double gamma, int n_contrast) {
  if (h_values.cols() != n_contrast) throw ContractError("class_log_probs: expected C columns");
  if (!(h_values.array() > 0.0).all()) throw ContractError("class_log_probs: h values must be positive");
  if (!(gamma > 0.0)) throw ContractError("class_log_probs: gamma must be positive");
  return class_log_probs_from_log(Var(Tensor(h_values.array().log())), gamma).value();
}

Var nre_loss(const NreSpec& spec, const VarParams& params, const Dataset& batch, RngKey key,
             const std::string& prefix) {
  const int c = spec.n_contrast;
  const Eigen::Index n = batch.rows();
  if (n < c + 1) throw ContractError("nre_loss: batch needs at least n_contrast + 1 rows");
  const auto order = permutation(key, n);
  const Tensor theta = batch.theta.flatten();
  Tensor y(n, batch.y.cols());
  Tensor th(n, theta.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    y.row(i) = batch.y.row(order[static_cast<std::size_t>(i)]);
    th.row(i) = theta.row(order[static_cast<std::size_t>(i)]);
  }
  // Block k pairs y_i with theta_{(i + k) mod n}; block 0 holds the true pairs.
  Tensor ys(n * (c + 1), y.cols());
  Tensor ths(n * (c + 1), th.cols());
  for (int k = 0; k <= c; ++k)
    for (Eigen::Index i = 0; i < n; ++i) {
      ys.row(k * n + i) = y.row(i);
      ths.row(k * n + i) = th.row((i + k) % n);
    }
  const Var lh = nn::blocks_to_cols(log_h(spec, params, Var(ys), Var(ths), prefix), c + 1);

  // Dependent tuple: contrasts 1..C-1 with the true theta in slot C.
  std::vector<Var> dep_parts;
  if (c > 1) dep_parts.push_back(nn::slice_cols(lh, 1, c - 1));
  dep_parts.push_back(nn::slice_cols(lh, 0, 1));
  const Var dep = class_log_probs_from_log(nn::concat_cols(dep_parts), spec.gamma);
  const Var marg = class_log_probs_from_log(nn::slice_cols(lh, 1, c), spec.gamma);

  const double p0 = 1.0 / (1.0 + spec.gamma);
  const double pc = spec.gamma / (1.0 + spec.gamma);
  const Var per_row = nn::slice_cols(marg, 0, 1) * p0 + nn::slice_cols(dep, c, 1) * pc;
  return -nn::mean(per_row);
}

Vector log_ratio(const NreSpec& spec, const NetParams& params, const Tensor& y, const Tensor& theta) {
  return log_h(spec, params, y, theta);
}

}  // namespace sbi::ratio
