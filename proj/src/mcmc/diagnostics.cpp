#include "sbi/mcmc/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <boost/math/distributions/normal.hpp>
#include <spdlog/spdlog.h>

#include "sbi/core/errors.hpp"

namespace sbi::mcmc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_draws(const Matrix& draws, Eigen::Index min_draws) {
  if (draws.cols() < 1 || draws.rows() < min_draws)
    throw ContractError("diagnostics: need at least " + std::to_string(min_draws) + " draws per chain");
  if (!draws.allFinite()) throw ContractError("diagnostics: non-finite draws");
}

bool is_constant(const Matrix& draws) { return draws.maxCoeff() == draws.minCoeff(); }

// Average ranks (1-based) of all entries, ties sharing their mean rank.
Matrix pooled_ranks(const Matrix& draws) {
  const auto s = draws.size();
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(s));
  std::iota(idx.begin(), idx.end(), 0);
  const double* v = draws.data();
  std::stable_sort(idx.begin(), idx.end(), [v](Eigen::Index a, Eigen::Index b) { return v[a] < v[b]; });
  Matrix ranks(draws.rows(), draws.cols());
  double* r = ranks.data();
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

// Linear-interpolation quantile of all entries.
double quantile(const Matrix& draws, double q) {
  std::vector<double> v(draws.data(), draws.data() + draws.size());
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

std::vector<bool> Diagnostics::rhat_ok() const {
  std::vector<bool> ok;
  for (double r : split_rhat) ok.push_back(r < kRhatThreshold);
  return ok;
}

std::vector<bool> Diagnostics::ess_ok() const {
  std::vector<bool> ok;
  for (double r : rel_ess) ok.push_back(r > kRelEssThreshold);
  return ok;
}

Matrix rank_normalize(const Matrix& draws) {
  const double s = static_cast<double>(draws.size());
  const boost::math::normal std_normal;
  return pooled_ranks(draws).unaryExpr(
      [&](double r) { return boost::math::quantile(std_normal, (r - 0.375) / (s + 0.25)); });
}

Matrix split_chains(const Matrix& draws) {
  const Eigen::Index half = draws.rows() / 2;
  Matrix out(half, 2 * draws.cols());
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    out.col(2 * c) = draws.col(c).head(half);
    out.col(2 * c + 1) = draws.col(c).tail(half);
  }
  return out;
}

double classic_rhat(const Matrix& draws) {
  const auto n = static_cast<double>(draws.rows());
  const auto m = static_cast<double>(draws.cols());
  const Eigen::RowVectorXd means = draws.colwise().mean();
  const double grand = means.mean();
  const double b = m > 1 ? n * (means.array() - grand).square().sum() / (m - 1.0) : 0.0;
  const double w = ((draws.rowwise() - means).array().square().colwise().sum() / (n - 1.0)).mean();
  if (w == 0.0) return kInf;
  const double var_plus = (n - 1.0) / n * w + b / n;
  return std::sqrt(var_plus / w);
}

double split_rhat(const Matrix& draws) {
  check_draws(draws, 4);
  if (is_constant(draws)) {
    spdlog::warn("split R-hat: constant draws, reporting +inf");
    return kInf;
  }
  return classic_rhat(rank_normalize(split_chains(draws)));
}

double ess_raw(const Matrix& draws) {
  const Eigen::Index n = draws.rows();
  const Eigen::Index m = draws.cols();
  if (n < 4) throw ContractError("ESS: need at least 4 draws per chain");
  const Matrix centered = draws.rowwise() - draws.colwise().mean();
  // Mean over chains of the biased autocovariance at `lag`.
  auto acov = [&](Eigen::Index lag) {
    double total = 0.0;
    for (Eigen::Index c = 0; c < m; ++c)
      total += centered.col(c).head(n - lag).dot(centered.col(c).tail(n - lag)) / static_cast<double>(n);
    return total / static_cast<double>(m);
  };
  const auto nd = static_cast<double>(n);
  const double mean_var = acov(0) * nd / (nd - 1.0);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) {
    const Eigen::RowVectorXd means = draws.colwise().mean();
    var_plus += (means.array() - means.mean()).square().sum() / static_cast<double>(m - 1);
  }
  if (var_plus == 0.0) return kNaN;

  std::vector<double> rho(static_cast<std::size_t>(n), 0.0);
  rho[0] = 1.0;
  double rho_even = 1.0;
  double rho_odd = 1.0 - (mean_var - acov(1)) / var_plus;
  rho[1] = rho_odd;
  Eigen::Index t = 1;
  while (t < n - 3 && rho_even + rho_odd > 0.0) {
    rho_even = 1.0 - (mean_var - acov(t + 1)) / var_plus;
    rho_odd = 1.0 - (mean_var - acov(t + 2)) / var_plus;
    if (rho_even + rho_odd >= 0.0) {
      rho[static_cast<std::size_t>(t + 1)] = rho_even;
      rho[static_cast<std::size_t>(t + 2)] = rho_odd;
    }
    t += 2;
  }
  // max_t may be -1 for very short chains; rho[max_t + 1] is then rho[0].
  const Eigen::Index max_t = t - 2;
  auto at = [&](Eigen::Index k) -> double& { return rho[static_cast<std::size_t>(k)]; };
  if (rho_even > 0.0) at(max_t + 1) = rho_even;
  // Geyer's initial monotone sequence.
  for (Eigen::Index k = 1; k <= max_t - 2; k += 2) {
    if (at(k + 1) + at(k + 2) > at(k - 1) + at(k)) {
      at(k + 1) = 0.5 * (at(k - 1) + at(k));
      at(k + 2) = at(k + 1);
    }
  }
  const double total = nd * static_cast<double>(m);
  double tau = -1.0 + at(max_t + 1);
  for (Eigen::Index k = 0; k <= max_t; ++k) tau += 2.0 * at(k);
  tau = std::max(tau, 1.0 / std::log10(total));
  return total / tau;
}

double ess_bulk(const Matrix& draws) {
  check_draws(draws, 4);
  if (is_constant(draws)) {
    spdlog::warn("ESS: constant draws, reporting NaN");
    return kNaN;
  }
  return ess_raw(rank_normalize(split_chains(draws)));
}

double ess_tail(const Matrix& draws) {
  check_draws(draws, 4);
  if (is_constant(draws)) {
    spdlog::warn("ESS: constant draws, reporting NaN");
    return kNaN;
  }
  double out = kInf;
  for (double q : {0.05, 0.95}) {
    const double cut = quantile(draws, q);
    const Matrix ind = (draws.array() <= cut).cast<double>().matrix();
    out = std::min(out, ess_raw(split_chains(ind)));
  }
  return out;
}

Eigen::MatrixXi rank_stats(const Matrix& draws, int n_bins) {
  check_draws(draws, 1);
  if (n_bins < 1) throw ContractError("rank_stats: n_bins must be >= 1");
  const Matrix ranks = pooled_ranks(draws);
  const auto s = static_cast<double>(draws.size());
  Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(draws.cols(), n_bins);
  for (Eigen::Index c = 0; c < draws.cols(); ++c)
    for (Eigen::Index i = 0; i < draws.rows(); ++i) {
      const int bin = std::min(n_bins - 1, static_cast<int>((ranks(i, c) - 1.0) / s * n_bins));
      ++counts(c, bin);
    }
  return counts;
}

Diagnostics diagnose(const ChainSet& chains) {
  chains.validate();
  Diagnostics d;
  const double total = static_cast<double>(chains.n_chains()) * static_cast<double>(chains.n_draws());
  for (int j = 0; j < chains.dim(); ++j) {
    const Matrix x = chains.coordinate(j);
    d.split_rhat.push_back(split_rhat(x));
    d.ess_bulk.push_back(ess_bulk(x));
    d.ess_tail.push_back(ess_tail(x));
    d.rel_ess.push_back(d.ess_bulk.back() / total);
  }
  return d;
}

Diagnostics diagnose_ess_only(const ChainSet& chains) {
  Diagnostics d = diagnose(chains);
  d.split_rhat.clear();
  return d;
}

}  // namespace sbi::mcmc
