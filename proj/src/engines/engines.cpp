#include "sbi/engines/engines.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include <spdlog/spdlog.h>

#include "sbi/core/errors.hpp"

namespace sbi::engines {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Direct posterior draws are retried this many times for out-of-support rows.
constexpr int kSupportRetries = 100;

struct Standardizer {
  RowVector theta_mean, theta_scale, y_mean, y_scale;

  static Standardizer from_data(const Matrix& theta, const Matrix& y) {
    Standardizer s;
    auto stats = [](const Matrix& m, RowVector& mean, RowVector& scale) {
      mean = m.colwise().mean();
      scale = ((m.rowwise() - mean).array().square().colwise().sum() / std::max<double>(1.0, static_cast<double>(m.rows() - 1)))
                  .sqrt();
      for (Eigen::Index j = 0; j < scale.size(); ++j)
        if (!(scale[j] > 1e-12) || !std::isfinite(scale[j])) scale[j] = 1.0;
    };
    stats(theta, s.theta_mean, s.theta_scale);
    stats(y, s.y_mean, s.y_scale);
    return s;
  }

  static Standardizer from_params(const NetParams& p, int theta_dim, int y_dim) {
    const std::string pre = kStandardizePrefix;
    auto get = [&](const std::string& name, int dim, double fallback) -> RowVector {
      const auto it = p.find(pre + name);
      if (it == p.end()) return RowVector::Constant(dim, fallback);
      if (it->second.rows() != 1 || it->second.cols() != dim)
        throw ContractError("params entry '" + pre + name + "' has the wrong shape");
      return it->second.row(0);
    };
    return {get("theta_mean", theta_dim, 0.0), get("theta_scale", theta_dim, 1.0), get("y_mean", y_dim, 0.0),
            get("y_scale", y_dim, 1.0)};
  }

  void store(NetParams& p) const {
    const std::string pre = kStandardizePrefix;
    p[pre + "theta_mean"] = theta_mean;
    p[pre + "theta_scale"] = theta_scale;
    p[pre + "y_mean"] = y_mean;
    p[pre + "y_scale"] = y_scale;
  }

  [[nodiscard]] Matrix z_theta(const Matrix& t) const {
    return (t.rowwise() - theta_mean).array().rowwise() / theta_scale.array();
  }
  [[nodiscard]] Matrix z_y(const Matrix& y) const { return (y.rowwise() - y_mean).array().rowwise() / y_scale.array(); }
  [[nodiscard]] Matrix theta_from_z(const Matrix& z) const {
    return (z.array().rowwise() * theta_scale.array()).rowwise() + theta_mean.array();
  }
};

NetParams network_only(const NetParams& p) {
  NetParams out;
  const std::string pre = kStandardizePrefix;
  for (const auto& [k, v] : p)
    if (k.rfind(pre, 0) != 0) out.emplace(k, v);
  return out;
}

void check_estimator(EngineKind kind, const EstimatorSpec& est, int theta_dim, int y_dim) {
  auto mismatch = [&](const std::string& what) {
    throw ConfigError(to_string(kind) + " estimator " + what + " (theta dim " + std::to_string(theta_dim) +
                      ", data dim " + std::to_string(y_dim) + ")");
  };
  switch (kind) {
    case EngineKind::nle:
    case EngineKind::npe: {
      if (!std::holds_alternative<flows::MafSpec>(est) && !std::holds_alternative<flows::MdnSpec>(est))
        mismatch("must be a maf or mdn density");
      const flows::DensitySpec d = std::holds_alternative<flows::MafSpec>(est)
                                       ? flows::DensitySpec(std::get<flows::MafSpec>(est))
                                       : flows::DensitySpec(std::get<flows::MdnSpec>(est));
      const int ev = kind == EngineKind::nle ? y_dim : theta_dim;
      const int ctx = kind == EngineKind::nle ? theta_dim : y_dim;
      if (flows::event_dim(d) != ev || flows::context_dim(d) != ctx) mismatch("has inconsistent event/context dims");
      std::visit([](const auto& s) { s.validate(); }, est);
      break;
    }
    case EngineKind::fmpe: {
      const auto* c = std::get_if<cnf::CnfSpec>(&est);
      if (!c) mismatch("must be a cnf");
      if (c->theta_dim != theta_dim || c->context_dim != y_dim) mismatch("has inconsistent dims");
      c->validate();
      break;
    }
    case EngineKind::nre: {
      const auto* r = std::get_if<ratio::NreSpec>(&est);
      if (!r) mismatch("must be an nre classifier");
      if (r->theta_dim != theta_dim || r->y_dim != y_dim) mismatch("has inconsistent dims");
      r->validate();
      break;
    }
  }
}

flows::DensitySpec as_density(const EstimatorSpec& est) {
  if (const auto* m = std::get_if<flows::MafSpec>(&est)) return *m;
  return std::get<flows::MdnSpec>(est);
}

double sigmoid(double u) { return u >= 0.0 ? 1.0 / (1.0 + std::exp(-u)) : std::exp(u) / (1.0 + std::exp(u)); }

// log sigma(u) + log(1 - sigma(u)) = -|u| - 2 log(1 + exp(-|u|)).
double log_sigmoid_deriv(double u) { return -std::abs(u) - 2.0 * std::log1p(std::exp(-std::abs(u))); }

nlohmann::json finite_or_null(const std::vector<double>& v) {
  auto arr = nlohmann::json::array();
  for (double x : v) arr.push_back(std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr));
  return arr;
}

}  // namespace

std::string to_string(EngineKind k) {
  switch (k) {
    case EngineKind::nle: return "nle";
    case EngineKind::npe: return "npe";
    case EngineKind::fmpe: return "fmpe";
    case EngineKind::nre: return "nre";
  }
  return "nle";
}

EngineKind engine_kind_from_string(const std::string& name) {
  if (name == "nle") return EngineKind::nle;
  if (name == "npe") return EngineKind::npe;
  if (name == "fmpe") return EngineKind::fmpe;
  if (name == "nre") return EngineKind::nre;
  throw ConfigError("unknown engine '" + name + "' (expected nle, npe, fmpe or nre)");
}

nlohmann::json estimator_to_json(const EstimatorSpec& spec) {
  nlohmann::json j;
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        j = s;
        if constexpr (std::is_same_v<T, flows::MafSpec>) j["type"] = "maf";
        if constexpr (std::is_same_v<T, flows::MdnSpec>) j["type"] = "mdn";
        if constexpr (std::is_same_v<T, cnf::CnfSpec>) j["type"] = "cnf";
        if constexpr (std::is_same_v<T, ratio::NreSpec>) j["type"] = "nre";
      },
      spec);
  return j;
}

EstimatorSpec estimator_from_json(const nlohmann::json& j) {
  try {
    const auto type = j.at("type").get<std::string>();
    if (type == "maf") return j.get<flows::MafSpec>();
    if (type == "mdn") return j.get<flows::MdnSpec>();
    if (type == "cnf") return j.get<cnf::CnfSpec>();
    if (type == "nre") return j.get<ratio::NreSpec>();
    throw ConfigError("unknown estimator type '" + type + "' (expected maf, mdn, cnf or nre)");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed estimator config: ") + e.what());
  }
}

EstimatorSpec default_estimator(EngineKind kind, int theta_dim, int y_dim) {
  switch (kind) {
    case EngineKind::nle: {
      flows::MafSpec s;
      s.event_dim = y_dim;
      s.context_dim = theta_dim;
      return s;
    }
    case EngineKind::npe: {
      flows::MafSpec s;
      s.event_dim = theta_dim;
      s.context_dim = y_dim;
      return s;
    }
    case EngineKind::fmpe: {
      cnf::CnfSpec s;
      s.theta_dim = theta_dim;
      s.context_dim = y_dim;
      return s;
    }
    case EngineKind::nre: {
      ratio::NreSpec s;
      s.theta_dim = theta_dim;
      s.y_dim = y_dim;
      return s;
    }
  }
  throw ContractError("default_estimator: unknown kind");
}

Engine::Engine(EngineKind kind, PriorSpec prior, Simulator simulator, EstimatorSpec estimator,
               mcmc::SamplerConfig sampler, RngKey probe_key)
    : kind_(kind),
      prior_(std::move(prior)),
      simulator_(std::move(simulator)),
      estimator_(std::move(estimator)),
      sampler_(sampler) {
  if (prior_.total_dim() < 1) throw ConfigError("engine: the prior has no parameters");
  if (!simulator_) throw ConfigError("engine: no simulator");
  sampler_.validate();
  const ThetaBatch probe = prior_sample(prior_, fold_in(probe_key, 0), 1);
  const Matrix y = simulator_(fold_in(probe_key, 1), probe);
  if (y.rows() != 1 || y.cols() < 1) throw ConfigError("engine: probe simulation returned a malformed matrix");
  y_dim_ = static_cast<int>(y.cols());
  check_estimator(kind_, estimator_, theta_dim(), y_dim_);
}

nlohmann::json Engine::to_json() const {
  return {{"kind", to_string(kind_)}, {"estimator", estimator_to_json(estimator_)}, {"sampler", sampler_}};
}

NetParams init_params(const Engine& e, RngKey key) {
  const auto& est = e.estimator();
  switch (e.kind()) {
    case EngineKind::nle:
    case EngineKind::npe: return flows::density_init(as_density(est), key);
    case EngineKind::fmpe: return cnf::cnf_init(std::get<cnf::CnfSpec>(est), key);
    case EngineKind::nre: return ratio::nre_init(std::get<ratio::NreSpec>(est), key);
  }
  throw ContractError("init_params: unknown kind");
}

Reparam::Reparam(const PriorSpec& prior) {
  for (int j = 0; j < prior.total_dim(); ++j) {
    const Support s = prior.support(j);
    if (s.kind == SupportKind::discrete)
      throw ContractError("MCMC needs continuous parameters; coordinate " + std::to_string(j) + " is discrete");
    supports_.push_back(s);
  }
}

Vector Reparam::to_unconstrained(const Vector& theta) const {
  Vector u(theta.size());
  for (Eigen::Index j = 0; j < theta.size(); ++j) {
    const auto& s = supports_[static_cast<std::size_t>(j)];
    switch (s.kind) {
      case SupportKind::positive: u[j] = std::log(theta[j]); break;
      case SupportKind::interval: {
        const double p = (theta[j] - s.lo) / (s.hi - s.lo);
        u[j] = std::log(p) - std::log1p(-p);
        break;
      }
      default: u[j] = theta[j];
    }
  }
  return u;
}

Vector Reparam::to_constrained(const Vector& u) const {
  Vector t(u.size());
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    const auto& s = supports_[static_cast<std::size_t>(j)];
    switch (s.kind) {
      case SupportKind::positive: t[j] = std::exp(u[j]); break;
      case SupportKind::interval: t[j] = s.lo + (s.hi - s.lo) * sigmoid(u[j]); break;
      default: t[j] = u[j];
    }
  }
  return t;
}

double Reparam::log_jacobian(const Vector& u) const {
  double lj = 0.0;
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    const auto& s = supports_[static_cast<std::size_t>(j)];
    if (s.kind == SupportKind::positive) lj += u[j];
    if (s.kind == SupportKind::interval) lj += std::log(s.hi - s.lo) + log_sigmoid_deriv(u[j]);
  }
  return lj;
}

mcmc::LogDensity Reparam::pullback(const mcmc::LogDensity& log_density_theta) const {
  return [self = *this, log_density_theta](const Vector& u) {
    const Vector theta = self.to_constrained(u);
    const double lp = log_density_theta(theta);
    if (!std::isfinite(lp)) return kNegInf;
    return lp + self.log_jacobian(u);
  };
}

mcmc::LogDensity surrogate_log_posterior(const Engine& e, const NetParams& params, const Vector& observable) {
  if (e.kind() != EngineKind::nle && e.kind() != EngineKind::nre)
    throw ContractError("surrogate_log_posterior: only nle and nre define a likelihood surrogate");
  if (observable.size() != e.y_dim())
    throw ContractError("observable has width " + std::to_string(observable.size()) + ", expected " +
                        std::to_string(e.y_dim()));
  const auto st = Standardizer::from_params(params, e.theta_dim(), e.y_dim());
  const Matrix zy = st.z_y(Matrix(observable.transpose()));
  const PriorSpec prior = e.prior();
  if (e.kind() == EngineKind::nle) {
    const flows::DensitySpec spec = as_density(e.estimator());
    // Standardizing y subtracts sum log y_scale from the log density.
    const double log_jac = -st.y_scale.array().log().sum();
    return [spec, params, zy, st, prior, log_jac](const Vector& theta) {
      const double lp = prior.log_prob_flat(std::span<const double>(theta.data(), static_cast<std::size_t>(theta.size())));
      if (!std::isfinite(lp)) return kNegInf;
      const Matrix zt = st.z_theta(Matrix(theta.transpose()));
      return flows::density_log_prob(spec, params, zy, zt)[0] + log_jac + lp;
    };
  }
  const ratio::NreSpec spec = std::get<ratio::NreSpec>(e.estimator());
  return [spec, params, zy, st, prior](const Vector& theta) {
    const double lp = prior.log_prob_flat(std::span<const double>(theta.data(), static_cast<std::size_t>(theta.size())));
    if (!std::isfinite(lp)) return kNegInf;
    const Matrix zt = st.z_theta(Matrix(theta.transpose()));
    return ratio::log_ratio(spec, params, zy, zt)[0] + lp;
  };
}

mcmc::ChainSet mcmc_posterior(const PriorSpec& prior, const mcmc::LogDensity& log_density, RngKey key,
                              const mcmc::SamplerConfig& cfg) {
  const Reparam rp(prior);
  const mcmc::LogDensity target = rp.pullback(log_density);
  const int dim = prior.total_dim();
  const ThetaBatch cand = prior_sample(prior, fold_in(key, 0), 100 * static_cast<Eigen::Index>(cfg.n_chains));
  const Matrix flat = cand.flatten();
  Matrix init(cfg.n_chains, dim);
  for (int c = 0; c < cfg.n_chains; ++c) {
    bool found = false;
    for (int t = 0; t < 100 && !found; ++t) {
      const Vector u = rp.to_unconstrained(flat.row(c * 100 + t).transpose());
      if (u.allFinite() && std::isfinite(target(u))) {
        init.row(c) = u.transpose();
        found = true;
      }
    }
    if (!found) throw NumericError("MCMC: no prior draw gives a finite posterior density for chain " + std::to_string(c));
  }
  mcmc::ChainSet chains = mcmc::sample(cfg, target, init, fold_in(key, 1), prior.layout());
  for (auto& ch : chains.chains)
    for (Eigen::Index i = 0; i < ch.rows(); ++i) ch.row(i) = rp.to_constrained(ch.row(i).transpose()).transpose();
  return chains;
}

namespace {

// Direct draws from npe/fmpe with out-of-support rows redrawn.
std::pair<Matrix, double> direct_posterior(const Engine& e, RngKey key, const NetParams& params, const Vector& observable,
                                           Eigen::Index n) {
  const auto st = Standardizer::from_params(params, e.theta_dim(), e.y_dim());
  const Matrix zy = st.z_y(Matrix(observable.transpose()));
  auto draw = [&](RngKey k, Eigen::Index m) -> Matrix {
    Matrix z = e.kind() == EngineKind::npe
                   ? flows::density_sample(as_density(e.estimator()), params, k, zy, m)
                   : cnf::cnf_sample(std::get<cnf::CnfSpec>(e.estimator()), params, k, zy, m);
    return st.theta_from_z(z);
  };
  Matrix out(n, e.theta_dim());
  Eigen::Index filled = 0;
  long drawn = 0;
  long rejected = 0;
  for (int attempt = 0; filled < n && attempt < kSupportRetries; ++attempt) {
    const Eigen::Index want = n - filled;
    const Matrix th = draw(fold_in(key, static_cast<std::uint64_t>(attempt)), want);
    const Vector lp = prior_log_prob(e.prior(), ThetaBatch::unflatten(e.prior().layout(), th));
    drawn += want;
    for (Eigen::Index i = 0; i < want; ++i) {
      if (std::isfinite(lp[i]) && th.row(i).allFinite()) {
        out.row(filled++) = th.row(i);
      } else {
        ++rejected;
      }
    }
  }
  const double rate = static_cast<double>(rejected) / static_cast<double>(drawn);
  if (filled < n)
    throw BudgetExhausted(to_string(e.kind()) + ": too many posterior draws fall outside the prior support (rate " +
                              format_double(rate) + ")",
                          rate);
  if (rate > 0.5)
    spdlog::warn("{}: {:.1f}% of posterior draws fell outside the prior support and were redrawn", to_string(e.kind()),
                 100.0 * rate);
  return {out, rate};
}

}  // namespace

InferenceResult sample_posterior(const Engine& e, RngKey key, const NetParams& params, const Vector& observable,
                                 Eigen::Index n_samples) {
  if (n_samples < 1) throw ContractError("sample_posterior: n_samples must be >= 1");
  if (observable.size() != e.y_dim())
    throw ContractError("observable has width " + std::to_string(observable.size()) + ", expected " +
                        std::to_string(e.y_dim()));
  InferenceResult r;
  r.kind = e.kind();
  r.observed = observable;
  if (e.kind() == EngineKind::nle || e.kind() == EngineKind::nre) {
    mcmc::SamplerConfig cfg = e.sampler();
    cfg.n_draws = static_cast<int>((n_samples + cfg.n_chains - 1) / cfg.n_chains);
    r.posterior = mcmc_posterior(e.prior(), surrogate_log_posterior(e, params, observable), key, cfg);
    r.diagnostics = mcmc::diagnose(r.posterior);
  } else {
    auto [draws, rate] = direct_posterior(e, key, params, observable, n_samples);
    r.posterior.chains = {std::move(draws)};
    r.posterior.layout = e.prior().layout();
    r.support_rejection_rate = rate;
    r.diagnostics = mcmc::diagnose_ess_only(r.posterior);
  }
  return r;
}

Dataset simulate_data(const Engine& e, RngKey key, Eigen::Index n_simulations, const NetParams& params,
                      const std::optional<Vector>& observable) {
  if (n_simulations < 1) throw ContractError("simulate_data: n_simulations must be >= 1");
  Dataset d;
  if (params.empty()) {
    d.theta = prior_sample(e.prior(), fold_in(key, 0), n_simulations);
  } else {
    if (!observable) throw ContractError("simulate_data: an observable is required with params");
    const InferenceResult post = sample_posterior(e, fold_in(key, 0), params, *observable, n_simulations);
    // Take draws round-robin across chains so every chain contributes.
    const auto& chains = post.posterior.chains;
    const auto n_ch = static_cast<Eigen::Index>(chains.size());
    Matrix flat(n_simulations, e.theta_dim());
    for (Eigen::Index i = 0; i < n_simulations; ++i)
      flat.row(i) = chains[static_cast<std::size_t>(i % n_ch)].row(i / n_ch);
    d.theta = ThetaBatch::unflatten(e.prior().layout(), flat);
  }
  d.y = e.simulator()(fold_in(key, 1), d.theta);
  if (d.y.rows() != n_simulations || d.y.cols() != e.y_dim())
    throw ContractError("simulator returned " + std::to_string(d.y.rows()) + "x" + std::to_string(d.y.cols()) +
                        ", expected " + std::to_string(n_simulations) + "x" + std::to_string(e.y_dim()));
  return d;
}

nn::FitResult fit(const Engine& e, RngKey key, const Dataset& data, const nn::FitConfig& cfg,
                  const std::optional<NetParams>& warm_start) {
  data.validate();
  Dataset clean = data;
  drop_nonfinite(clean);
  if (clean.rows() < 2) throw ContractError("fit: need at least two finite simulations");
  if (clean.y.cols() != e.y_dim() || clean.theta.layout() != e.prior().layout())
    throw ContractError("fit: dataset does not match the engine's parameter layout or data width");
  const Matrix theta = clean.theta.flatten();
  const auto st = Standardizer::from_data(theta, clean.y);
  Dataset z;
  z.y = st.z_y(clean.y);
  z.theta = ThetaBatch::unflatten(ParamLayout{{"theta"}, {e.theta_dim()}}, st.z_theta(theta));

  nn::Objective obj;
  const EstimatorSpec est = e.estimator();
  switch (e.kind()) {
    case EngineKind::nle:
      obj = [spec = as_density(est)](const nn::VarParams& p, const Dataset& b, RngKey) {
        return -nn::mean(flows::density_log_prob(spec, p, nn::Var(b.y), nn::Var(b.theta.at("theta"))));
      };
      break;
    case EngineKind::npe:
      obj = [spec = as_density(est)](const nn::VarParams& p, const Dataset& b, RngKey) {
        return -nn::mean(flows::density_log_prob(spec, p, nn::Var(b.theta.at("theta")), nn::Var(b.y)));
      };
      break;
    case EngineKind::fmpe:
      obj = [spec = std::get<cnf::CnfSpec>(est)](const nn::VarParams& p, const Dataset& b, RngKey k) {
        return cnf::cfm_loss(spec, p, b.theta.at("theta"), b.y, k);
      };
      break;
    case EngineKind::nre:
      obj = [spec = std::get<ratio::NreSpec>(est)](const nn::VarParams& p, const Dataset& b, RngKey k) {
        return ratio::nre_loss(spec, p, b, k);
      };
      break;
  }
  NetParams init = warm_start ? network_only(*warm_start) : init_params(e, fold_in(key, 0));
  nn::FitResult res = nn::fit_loop(obj, std::move(init), z, fold_in(key, 1), cfg);
  st.store(res.params);
  return res;
}

SequentialResult sequential_run(const Engine& e, RngKey key, const Vector& observable, int n_rounds,
                                Eigen::Index n_per_round, const nn::FitConfig& cfg, bool warm_start) {
  if (n_rounds < 1) throw ContractError("sequential_run: n_rounds must be >= 1");
  if (n_rounds > 1 && (e.kind() == EngineKind::npe || e.kind() == EngineKind::fmpe))
    spdlog::warn("{} was not designed for sequential inference; care must be taken with the resulting posterior",
                 to_string(e.kind()));
  SequentialResult out;
  std::optional<Dataset> data;
  for (int r = 1; r <= n_rounds; ++r) {
    const RngKey rk = fold_in(key, static_cast<std::uint64_t>(r));
    const Dataset fresh = simulate_data(e, fold_in(rk, 0), n_per_round, out.params,
                                        out.params.empty() ? std::nullopt : std::optional<Vector>(observable));
    data = stack_data(data, fresh);
    const std::optional<NetParams> start =
        warm_start && !out.params.empty() ? std::optional<NetParams>(out.params) : std::nullopt;
    auto res = fit(e, fold_in(rk, 1), *data, cfg, start);
    out.params = std::move(res.params);
    out.losses.push_back(std::move(res.losses));
    spdlog::debug("sequential round {}/{}: {} simulations", r, n_rounds, data->rows());
  }
  out.data = std::move(*data);
  return out;
}

nlohmann::json inference_metadata(const InferenceResult& r) {
  nlohmann::json j;
  j["engine"] = to_string(r.kind);
  j["observable"] = std::vector<double>(r.observed.data(), r.observed.data() + r.observed.size());
  j["parameters"] = r.posterior.layout.column_labels();
  j["n_chains"] = r.posterior.n_chains();
  j["n_draws"] = r.posterior.n_draws();
  nlohmann::json d;
  if (!r.diagnostics.split_rhat.empty()) d["split_rhat"] = finite_or_null(r.diagnostics.split_rhat);
  d["ess_bulk"] = finite_or_null(r.diagnostics.ess_bulk);
  d["ess_tail"] = finite_or_null(r.diagnostics.ess_tail);
  d["rel_ess"] = finite_or_null(r.diagnostics.rel_ess);
  j["diagnostics"] = d;
  if (r.kind == EngineKind::npe || r.kind == EngineKind::fmpe) j["support_rejection_rate"] = r.support_rejection_rate;
  return j;
}

void write_inference_result(const std::string& csv_path, const std::string& json_path, const InferenceResult& r,
                            const nlohmann::json& extra) {
  mcmc::write_chainset_csv(csv_path, r.posterior);
  nlohmann::json j = inference_metadata(r);
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream out(json_path);
  if (!out) throw ConfigError("cannot open '" + json_path + "' for writing");
  out << j.dump(2) << '\n';
}

}  // namespace sbi::engines
