#include "sbi/abc/abc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>

#include <Eigen/Cholesky>
#include <spdlog/spdlog.h>

#include "sbi/core/dataset.hpp"
#include "sbi/core/errors.hpp"

namespace sbi::abc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Target number of candidate proposals per SMC pass.
constexpr Eigen::Index kPassSize = 4096;

Matrix summarize(const SummaryFn& summary, const Matrix& y) {
  Matrix s = summary(y);
  if (s.rows() != y.rows()) throw ContractError("summary function changed the number of rows");
  return s;
}

Vector summary_of_obs(const SummaryFn& summary, const Vector& y_obs) {
  return summarize(summary, Matrix(y_obs.transpose())).row(0).transpose();
}

}  // namespace

std::string to_string(KernelKind k) {
  switch (k) {
    case KernelKind::indicator: return "indicator";
    case KernelKind::gaussian: return "gaussian";
    case KernelKind::epanechnikov: return "epanechnikov";
  }
  return "indicator";
}

KernelKind kernel_kind_from_string(const std::string& name) {
  if (name == "indicator") return KernelKind::indicator;
  if (name == "gaussian") return KernelKind::gaussian;
  if (name == "epanechnikov") return KernelKind::epanechnikov;
  throw ConfigError("unknown kernel '" + name + "' (expected indicator, gaussian or epanechnikov)");
}

double kernel_eval(const KernelSpec& k, double u) {
  if (!(k.epsilon > 0.0)) throw ContractError("kernel_eval: epsilon must be positive");
  const double v = u / k.epsilon;
  switch (k.kind) {
    case KernelKind::indicator: return std::abs(v) <= 1.0 ? 0.5 / k.epsilon : 0.0;
    case KernelKind::gaussian: return std::exp(-0.5 * v * v) / (k.epsilon * std::sqrt(2.0 * std::numbers::pi));
    case KernelKind::epanechnikov: return std::abs(v) <= 1.0 ? 0.75 * (1.0 - v * v) / k.epsilon : 0.0;
  }
  return 0.0;
}

ThetaBatch rejection_abc(const PriorSpec& prior, const Simulator& simulator, const SummaryFn& summary,
                         const DistanceFn& distance, const Vector& y_obs, RngKey key, Eigen::Index n_accept,
                         double epsilon, const RejectionConfig& cfg) {
  if (!(epsilon > 0.0)) throw ContractError("rejection_abc: epsilon must be positive");
  if (n_accept < 1 || cfg.batch_size < 1) throw ContractError("rejection_abc: n_accept and batch_size must be >= 1");
  const Vector s_obs = summary_of_obs(summary, y_obs);
  const std::optional<KernelSpec> kernel =
      cfg.kernel ? std::optional<KernelSpec>(KernelSpec{*cfg.kernel, epsilon}) : std::nullopt;
  const double k0 = kernel ? kernel_eval(*kernel, 0.0) : 1.0;

  std::vector<Matrix> accepted_rows;
  Eigen::Index n_accepted = 0;
  Eigen::Index n_sims = 0;
  ParamLayout layout = prior.layout();
  for (std::uint64_t b = 0; n_accepted < n_accept; ++b) {
    const RngKey bk = fold_in(key, b);
    const ThetaBatch theta = prior_sample(prior, fold_in(bk, 0), cfg.batch_size);
    const Matrix y = simulator(fold_in(bk, 1), theta);
    const Vector d = distance(summarize(summary, y), s_obs);
    Generator gen(fold_in(bk, 2));
    const Matrix flat = theta.flatten();
    for (Eigen::Index i = 0; i < d.size() && n_accepted < n_accept; ++i) {
      const bool ok = kernel ? gen.uniform() < kernel_eval(*kernel, d[i]) / k0 : d[i] < epsilon;
      if (ok && flat.row(i).allFinite() && y.row(i).allFinite()) {
        accepted_rows.push_back(flat.row(i));
        ++n_accepted;
      }
    }
    n_sims += cfg.batch_size;
    const double rate = static_cast<double>(n_accepted) / static_cast<double>(n_sims);
    if (n_accepted < n_accept &&
        (n_sims >= cfg.max_simulations || (n_sims >= cfg.rate_check_after && rate < 1e-6)))
      throw BudgetExhausted("rejection ABC: simulation budget exhausted after " + std::to_string(n_sims) +
                                " simulations (acceptance rate " + format_double(rate) + ")",
                            rate);
  }
  Matrix out(n_accept, layout.total_dim());
  for (Eigen::Index i = 0; i < n_accept; ++i) out.row(i) = accepted_rows[static_cast<std::size_t>(i)];
  return ThetaBatch::unflatten(layout, out);
}

void SmcConfig::validate() const {
  if (n_particles < 2) throw ConfigError("SMC-ABC: n_particles must be >= 2");
  if (n_rounds < 1) throw ConfigError("SMC-ABC: n_rounds must be >= 1");
  if (!(eps_decay > 0.0 && eps_decay < 1.0)) throw ConfigError("SMC-ABC: eps_decay must lie in (0, 1)");
  if (!(ess_threshold > 0.0 && ess_threshold <= 1.0)) throw ConfigError("SMC-ABC: ess_threshold must lie in (0, 1]");
  if (max_tries_per_particle < 1) throw ConfigError("SMC-ABC: max_tries_per_particle must be >= 1");
  if (!(rw_cov_scale > 0.0)) throw ConfigError("SMC-ABC: rw_cov_scale must be positive");
  if (initial_epsilon && !(*initial_epsilon > 0.0)) throw ConfigError("SMC-ABC: initial_epsilon must be positive");
}

void to_json(nlohmann::json& j, const SmcConfig& c) {
  j = nlohmann::json{{"n_particles", c.n_particles},
                     {"n_rounds", c.n_rounds},
                     {"eps_decay", c.eps_decay},
                     {"ess_threshold", c.ess_threshold},
                     {"max_tries_per_particle", c.max_tries_per_particle},
                     {"kernel", to_string(c.kernel)},
                     {"transition", c.transition == Transition::prior ? "prior" : "gaussian_rw"},
                     {"rw_cov_scale", c.rw_cov_scale}};
  j["initial_epsilon"] = c.initial_epsilon ? nlohmann::json(*c.initial_epsilon) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, SmcConfig& c) {
  const SmcConfig d;
  c.n_particles = j.value("n_particles", d.n_particles);
  c.n_rounds = j.value("n_rounds", d.n_rounds);
  c.eps_decay = j.value("eps_decay", d.eps_decay);
  c.ess_threshold = j.value("ess_threshold", d.ess_threshold);
  c.max_tries_per_particle = j.value("max_tries_per_particle", d.max_tries_per_particle);
  c.kernel = kernel_kind_from_string(j.value("kernel", to_string(d.kernel)));
  const auto t = j.value("transition", std::string("gaussian_rw"));
  if (t != "gaussian_rw" && t != "prior") throw ConfigError("unknown SMC transition '" + t + "'");
  c.transition = t == "prior" ? Transition::prior : Transition::gaussian_rw;
  c.rw_cov_scale = j.value("rw_cov_scale", d.rw_cov_scale);
  c.initial_epsilon.reset();
  if (j.contains("initial_epsilon") && !j.at("initial_epsilon").is_null())
    c.initial_epsilon = j.at("initial_epsilon").get<double>();
  c.validate();
}

double ess_of_weights(const Vector& w) {
  const double s = w.sum();
  const double s2 = w.squaredNorm();
  if (!(s2 > 0.0)) throw ContractError("ess_of_weights: weights are all zero");
  return s * s / s2;
}

std::vector<Eigen::Index> systematic_resample(const Vector& w, RngKey key) {
  const Eigen::Index n = w.size();
  if (n < 1) throw ContractError("systematic_resample: empty weights");
  if ((w.array() < 0.0).any() || !(w.sum() > 0.0)) throw ContractError("systematic_resample: invalid weights");
  const double total = w.sum();
  Generator gen(key);
  const double u0 = gen.uniform() / static_cast<double>(n);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  double cum = w[0] / total;
  Eigen::Index j = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double pos = u0 + static_cast<double>(i) / static_cast<double>(n);
    while (pos >= cum && j < n - 1) cum += w[++j] / total;
    idx[static_cast<std::size_t>(i)] = j;
  }
  return idx;
}

std::vector<double> SmcResult::epsilon_trace() const {
  std::vector<double> out;
  for (const auto& r : rounds) out.push_back(r.epsilon);
  return out;
}

RowVector SmcResult::weighted_mean() const {
  return (particles.weights.transpose() * particles.thetas.flatten()) / particles.weights.sum();
}

namespace {

// Gaussian random-walk kernel with a fixed covariance.
struct RandomWalk {
  Matrix chol;  // lower factor L, cov = L L^T
  Matrix chol_inv;
  double log_norm = 0.0;

  RandomWalk(const Matrix& particles, const Vector& w, double scale) {
    const Eigen::Index d = particles.cols();
    const RowVector mean = (w.transpose() * particles) / w.sum();
    const Matrix c = particles.rowwise() - mean;
    Eigen::MatrixXd cov = scale * (c.transpose() * w.asDiagonal() * c) / w.sum();
    // Degenerate particle clouds get a small isotropic floor.
    const double floor = 1e-10 * std::max(1.0, cov.diagonal().maxCoeff());
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    while (llt.info() != Eigen::Success || (llt.matrixL().toDenseMatrix().diagonal().array() <= 0.0).any()) {
      cov.diagonal().array() += floor;
      llt.compute(cov);
    }
    chol = llt.matrixL();
    chol_inv = chol.triangularView<Eigen::Lower>().solve(Eigen::MatrixXd::Identity(d, d));
    log_norm = -chol.diagonal().array().log().sum() - 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi);
  }

  [[nodiscard]] double log_density(const RowVector& x, const RowVector& center) const {
    const Vector z = chol_inv * (x - center).transpose();
    return log_norm - 0.5 * z.squaredNorm();
  }
};

double log_sum_exp(const Vector& v) {
  const double hi = v.maxCoeff();
  if (!std::isfinite(hi)) return hi;
  return hi + std::log((v.array() - hi).exp().sum());
}

}  // namespace

SmcResult smc_abc(const PriorSpec& prior, const Simulator& simulator, const SummaryFn& summary,
                  const DistanceFn& distance, const Vector& y_obs, RngKey key, const SmcConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = cfg.n_particles;
  const ParamLayout layout = prior.layout();
  const Eigen::Index dim = layout.total_dim();
  const Vector s_obs = summary_of_obs(summary, y_obs);

  // Initialization from the prior.
  const RngKey init_key = fold_in(key, 0);
  const ThetaBatch theta0 = prior_sample(prior, fold_in(init_key, 0), n);
  const Vector d0 = distance(summarize(summary, simulator(fold_in(init_key, 1), theta0)), s_obs);
  Matrix particles = theta0.flatten();
  Vector weights = Vector::Constant(n, 1.0 / static_cast<double>(n));
  double eps = cfg.initial_epsilon.value_or(d0.minCoeff());

  SmcResult result;
  for (int r = 1; r <= cfg.n_rounds; ++r) {
    const RngKey rk = fold_in(key, static_cast<std::uint64_t>(r));
    const KernelSpec kern{cfg.kernel, std::isfinite(eps) ? eps : 1.0};
    std::optional<RandomWalk> rw;
    if (cfg.transition == Transition::gaussian_rw) rw.emplace(particles, weights, cfg.rw_cov_scale);

    std::vector<double> cum_w(static_cast<std::size_t>(n));
    std::partial_sum(weights.data(), weights.data() + n, cum_w.begin());
    for (auto& v : cum_w) v /= cum_w.back();
    // Each pass gives every pending particle k tries (k grows as particles
    // are accepted); a particle takes its first accepted try in order.
    Matrix proposed = particles;
    std::vector<Eigen::Index> pending(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) pending[static_cast<std::size_t>(i)] = i;
    long n_proposals = 0;
    long n_accepted = 0;
    int tries_used = 0;
    for (std::uint64_t pass = 0; tries_used < cfg.max_tries_per_particle && !pending.empty(); ++pass) {
      const RngKey pk = fold_in(rk, pass);
      const auto m = static_cast<Eigen::Index>(pending.size());
      const auto k = static_cast<Eigen::Index>(
          std::clamp<Eigen::Index>(kPassSize / m, 1, cfg.max_tries_per_particle - tries_used));
      tries_used += static_cast<int>(k);
      // Row p * k + j is try j of pending particle p.
      Matrix cand(m * k, dim);
      if (rw) {
        Generator gen(fold_in(pk, 0));
        Matrix z(m * k, dim);
        for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = gen.normal();
        cand = z * rw->chol.transpose();
        // Every try draws its parent from the weighted previous population.
        Generator pick(fold_in(pk, 3));
        for (Eigen::Index i = 0; i < cand.rows(); ++i) {
          const double u = pick.uniform();
          const auto it = std::upper_bound(cum_w.begin(), cum_w.end(), u);
          const auto parent = std::min<Eigen::Index>(it - cum_w.begin(), n - 1);
          cand.row(i) += particles.row(parent);
        }
      } else {
        cand = prior_sample(prior, fold_in(pk, 0), m * k).flatten();
      }
      // Out-of-support proposals are rejected without simulating.
      const Vector lp = prior_log_prob(prior, ThetaBatch::unflatten(layout, cand));
      std::vector<Eigen::Index> in_support;
      for (Eigen::Index i = 0; i < cand.rows(); ++i)
        if (std::isfinite(lp[i])) in_support.push_back(i);
      std::vector<char> ok_row(static_cast<std::size_t>(cand.rows()), 0);
      if (!in_support.empty()) {
        Matrix sub(static_cast<Eigen::Index>(in_support.size()), dim);
        for (std::size_t s = 0; s < in_support.size(); ++s) sub.row(static_cast<Eigen::Index>(s)) = cand.row(in_support[s]);
        const Matrix y = simulator(fold_in(pk, 1), ThetaBatch::unflatten(layout, sub));
        const Vector d = distance(summarize(summary, y), s_obs);
        Generator gen(fold_in(pk, 2));
        for (std::size_t s = 0; s < in_support.size(); ++s) {
          const auto row = static_cast<Eigen::Index>(s);
          const double ds = d[row];
          const bool ok = !std::isfinite(eps) || cfg.kernel == KernelKind::indicator
                              ? ds < eps
                              : gen.uniform() < kernel_eval(kern, ds) / kernel_eval(kern, 0.0);
          if (ok && y.row(row).allFinite()) ok_row[static_cast<std::size_t>(in_support[s])] = 1;
        }
      }
      std::vector<Eigen::Index> still;
      for (Eigen::Index p = 0; p < m; ++p) {
        const Eigen::Index i = pending[static_cast<std::size_t>(p)];
        Eigen::Index j = 0;
        while (j < k && !ok_row[static_cast<std::size_t>(p * k + j)]) ++j;
        if (j < k) {
          proposed.row(i) = cand.row(p * k + j);
          ++n_accepted;
          n_proposals += j + 1;
        } else {
          n_proposals += k;
          still.push_back(i);
        }
      }
      pending = std::move(still);
    }

    RoundStats stats;
    stats.epsilon = eps;
    stats.acceptance_rate = n_proposals > 0 ? static_cast<double>(n_accepted) / static_cast<double>(n_proposals) : 0.0;
    stats.n_exhausted = static_cast<int>(pending.size());
    if (static_cast<Eigen::Index>(pending.size()) == n) {
      spdlog::warn("SMC-ABC: every particle exhausted its tries in round {}; stopping early", r);
      stats.ess = ess_of_weights(weights);
      result.rounds.push_back(stats);
      break;
    }

    // w_n proportional to prior(theta_n) / sum_m w_m K(theta_n | theta_m).
    Vector log_w(n);
    const Vector log_prev = weights.array().log();
    for (Eigen::Index i = 0; i < n; ++i) {
      const RowVector x = proposed.row(i);
      const double lp = prior.log_prob_flat(std::span<const double>(x.data(), static_cast<std::size_t>(dim)));
      if (!rw) {
        log_w[i] = 0.0;  // the prior transition cancels the prior exactly
        continue;
      }
      Vector terms(n);
      for (Eigen::Index m = 0; m < n; ++m) terms[m] = log_prev[m] + rw->log_density(x, particles.row(m));
      log_w[i] = lp - log_sum_exp(terms);
    }
    const double lse = log_sum_exp(log_w);
    if (!std::isfinite(lse)) throw NumericError("SMC-ABC: all importance weights vanished in round " + std::to_string(r));
    weights = (log_w.array() - lse).exp();
    weights /= weights.sum();
    particles = proposed;
    stats.ess = ess_of_weights(weights);
    stats.weight_sum = weights.sum();
    if (stats.ess < cfg.ess_threshold * static_cast<double>(n)) {
      const auto idx = systematic_resample(weights, fold_in(rk, 1u << 30));
      Matrix res(n, dim);
      for (Eigen::Index i = 0; i < n; ++i) res.row(i) = particles.row(idx[static_cast<std::size_t>(i)]);
      particles = std::move(res);
      weights.setConstant(1.0 / static_cast<double>(n));
      stats.resampled = true;
    }
    result.rounds.push_back(stats);
    result.particles.round = r;
    result.particles.epsilon = eps;
    eps *= cfg.eps_decay;
  }
  result.particles.thetas = ThetaBatch::unflatten(layout, particles);
  result.particles.weights = weights;
  return result;
}

void write_smc_trace_csv(std::ostream& out, const SmcResult& r) {
  out << "round,epsilon,acceptance_rate,n_exhausted,ess,weight_sum,resampled\n";
  for (std::size_t i = 0; i < r.rounds.size(); ++i) {
    const auto& s = r.rounds[i];
    out << i + 1 << ',' << format_double(s.epsilon) << ',' << format_double(s.acceptance_rate) << ',' << s.n_exhausted
        << ',' << format_double(s.ess) << ',' << format_double(s.weight_sum) << ',' << (s.resampled ? 1 : 0) << '\n';
  }
}

void write_smc_trace_csv(const std::string& path, const SmcResult& r) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  write_smc_trace_csv(out, r);
}

}  // namespace sbi::abc
