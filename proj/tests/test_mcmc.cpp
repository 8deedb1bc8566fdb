#include <cmath>
#include <numbers>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include "doctest.h"
#include "sbi/core/errors.hpp"
#include "sbi/mcmc/diagnostics.hpp"
#include "sbi/mcmc/samplers.hpp"
#include "test_util.hpp"

using namespace sbi;
using namespace sbi::mcmc;
using sbi::testing::random_matrix;

namespace {

ParamLayout layout_1d() { return ParamLayout{{"x"}, {1}}; }

double std_normal(const Vector& x) { return -0.5 * x.squaredNorm(); }

// x1 ~ N(0, 1), x2 | x1 ~ N(0.5 (x1^2 - 1), 1); both marginal means are 0.
double banana(const Vector& x) {
  const double m = 0.5 * (x[0] * x[0] - 1.0);
  return -0.5 * x[0] * x[0] - 0.5 * (x[1] - m) * (x[1] - m);
}

std::pair<double, double> moments(const ChainSet& cs, int col) {
  const Matrix x = cs.coordinate(col);
  const double mean = x.mean();
  return {mean, (x.array() - mean).square().mean()};
}

// Independent oracle: O(S^2) ranks, direct formulas.
double oracle_split_rhat(const Matrix& draws) {
  const Eigen::Index half = draws.rows() / 2;
  std::vector<std::vector<double>> splits;
  for (Eigen::Index c = 0; c < draws.cols(); ++c) {
    std::vector<double> a, b;
    for (Eigen::Index i = 0; i < half; ++i) {
      a.push_back(draws(i, c));
      b.push_back(draws(draws.rows() - half + i, c));
    }
    splits.push_back(a);
    splits.push_back(b);
  }
  std::vector<double> all;
  for (const auto& s : splits) all.insert(all.end(), s.begin(), s.end());
  const double total = static_cast<double>(all.size());
  const boost::math::normal nd;
  for (auto& s : splits)
    for (double& v : s) {
      double less = 0, equal = 0;
      for (double w : all) {
        less += w < v;
        equal += w == v;
      }
      const double rank = less + 0.5 * (equal + 1.0);
      v = boost::math::quantile(nd, (rank - 0.375) / (total + 0.25));
    }
  const double n = static_cast<double>(half);
  const double m = static_cast<double>(splits.size());
  double grand = 0;
  std::vector<double> means;
  for (const auto& s : splits) {
    double mu = 0;
    for (double v : s) mu += v / n;
    means.push_back(mu);
    grand += mu / m;
  }
  double b = 0, w = 0;
  for (std::size_t k = 0; k < splits.size(); ++k) {
    b += n * (means[k] - grand) * (means[k] - grand) / (m - 1);
    double var = 0;
    for (double v : splits[k]) var += (v - means[k]) * (v - means[k]) / (n - 1);
    w += var / m;
  }
  return std::sqrt(((n - 1) / n * w + b / n) / w);
}

Matrix ar1(RngKey key, Eigen::Index n, int chains, double rho) {
  const Matrix z = random_matrix(key, n, chains);
  Matrix x(n, chains);
  for (int c = 0; c < chains; ++c) {
    x(0, c) = z(0, c);
    for (Eigen::Index i = 1; i < n; ++i) x(i, c) = rho * x(i - 1, c) + std::sqrt(1 - rho * rho) * z(i, c);
  }
  return x;
}

}  // namespace

TEST_CASE("slice sampler on a standard normal") {
  SamplerConfig cfg;
  cfg.n_draws = 2000;
  const auto cs = sample(cfg, std_normal, Matrix::Zero(1, 1), make_key(1), layout_1d());
  REQUIRE(cs.n_chains() == 4);
  REQUIRE(cs.n_draws() == 2000);
  const auto [mean, var] = moments(cs, 0);
  CHECK(std::abs(mean) < 0.05);
  CHECK(var >= 0.9);
  CHECK(var <= 1.1);
}

TEST_CASE("random-walk and Langevin samplers on a standard normal") {
  for (auto kind : {SamplerKind::rmh, SamplerKind::mala}) {
    SamplerConfig cfg;
    cfg.kind = kind;
    cfg.n_draws = 20000;
    cfg.rmh_step = 2.4;
    cfg.mala_step = 1.2;
    const auto cs = sample(cfg, std_normal, Matrix::Zero(1, 1), make_key(2), layout_1d(),
                           [](const Vector& x) -> Vector { return -x; });
    const auto [mean, var] = moments(cs, 0);
    CAPTURE(to_string(kind));
    CHECK(std::abs(mean) < 0.05);
    CHECK(var >= 0.9);
    CHECK(var <= 1.1);
  }
  // MALA with the default step and numerical gradients still targets N(0, 1).
  SamplerConfig cfg;
  cfg.kind = SamplerKind::mala;
  cfg.n_chains = 8;
  cfg.n_draws = 5000;
  const auto cs = sample(cfg, std_normal, random_matrix(make_key(3), 8, 1), make_key(4), layout_1d());
  const auto [mean, var] = moments(cs, 0);
  CHECK(std::abs(mean) < 0.15);
  CHECK(std::abs(var - 1.0) < 0.25);
}

TEST_CASE("degenerate and invalid sampler inputs") {
  SamplerConfig cfg;
  cfg.kind = SamplerKind::rmh;
  cfg.rmh_step = 0.0;
  cfg.n_draws = 50;
  Matrix init(1, 2);
  init << 0.3, -0.7;
  const auto cs = sample(cfg, std_normal, init, make_key(5), ParamLayout{{"a"}, {2}});
  for (const auto& c : cs.chains) CHECK((c.rowwise() - init.row(0)).isZero(0.0));

  SamplerConfig slice;
  CHECK_THROWS_AS(sample(slice, std_normal, Matrix::Constant(1, 1, NAN), make_key(1), layout_1d()), ContractError);
  const LogDensity bounded = [](const Vector& x) { return x[0] > 0 ? -x[0] : -INFINITY; };
  CHECK_THROWS_AS(sample(slice, bounded, Matrix::Constant(1, 1, -1.0), make_key(1), layout_1d()), ContractError);
  CHECK_THROWS_AS(sample(slice, std_normal, Matrix::Zero(3, 1), make_key(1), layout_1d()), ContractError);
  CHECK_THROWS_AS(sample(slice, std_normal, Matrix::Zero(1, 2), make_key(1), layout_1d()), ContractError);
  slice.slice_width = 0.0;
  CHECK_THROWS_AS(slice.validate(), ConfigError);
  CHECK_THROWS_AS(sampler_kind_from_string("nuts"), ConfigError);

  // Bounded support: draws stay inside and match Exp(1).
  SamplerConfig ok;
  const auto exp_chains = sample(ok, bounded, Matrix::Ones(1, 1), make_key(6), layout_1d());
  CHECK(exp_chains.pooled().minCoeff() > 0.0);
  CHECK(std::abs(exp_chains.pooled().mean() - 1.0) < 0.1);
}

TEST_CASE("banana target: slice and random walk agree") {
  const ParamLayout layout{{"x"}, {2}};
  SamplerConfig s;
  s.n_draws = 5000;
  SamplerConfig r = s;
  r.kind = SamplerKind::rmh;
  r.rmh_step = 1.0;
  r.n_draws = 40000;
  const auto a = sample(s, banana, Matrix::Zero(1, 2), make_key(7), layout);
  const auto b = sample(r, banana, Matrix::Zero(1, 2), make_key(8), layout);
  for (int j = 0; j < 2; ++j) {
    CAPTURE(j);
    CHECK(std::abs(moments(a, j).first - moments(b, j).first) < 0.1);
    CHECK(std::abs(moments(a, j).first) < 0.1);
  }
}

TEST_CASE("per-chain determinism") {
  SamplerConfig cfg;
  cfg.n_warmup = 10;
  cfg.n_draws = 100;
  const Matrix init = random_matrix(make_key(9), 4, 1);
  const auto four = sample(cfg, std_normal, init, make_key(10), layout_1d());
  cfg.n_chains = 2;
  const auto two = sample(cfg, std_normal, init.topRows(2), make_key(10), layout_1d());
  CHECK(four.chains[0] == two.chains[0]);
  CHECK(four.chains[1] == two.chains[1]);
  CHECK(four.chains[0] != four.chains[1]);
}

TEST_CASE("slice sampler leaves the target invariant") {
  // Start 2000 independent chains from exact draws and run 100 steps each.
  SamplerConfig cfg;
  cfg.n_warmup = 0;
  cfg.n_draws = 100;
  const Matrix starts = random_matrix(make_key(11), 2000, 1);
  std::vector<double> finals;
  for (Eigen::Index i = 0; i < starts.rows(); ++i) {
    const Matrix chain = run_chain(cfg, std_normal, starts.row(i).transpose(), fold_in(make_key(12), i));
    finals.push_back(chain(chain.rows() - 1, 0));
  }
  const double d = sbi::testing::ks_statistic(finals, [](double x) { return sbi::testing::normal_cdf(x); });
  CHECK(d < sbi::testing::ks_critical_one(finals.size()));
}

TEST_CASE("numerical gradient") {
  const LogDensity f = [](const Vector& x) { return std::sin(x[0]) * x[1] * x[1]; };
  Vector x(2);
  x << 0.4, -1.3;
  const Vector g = numerical_gradient(f, x);
  CHECK(g[0] == doctest::Approx(std::cos(0.4) * 1.69).epsilon(1e-8));
  CHECK(g[1] == doctest::Approx(2.0 * std::sin(0.4) * -1.3).epsilon(1e-8));
}

TEST_CASE("chain CSV round trip and config JSON") {
  ChainSet cs;
  cs.layout = ParamLayout{{"mean", "scale"}, {2, 1}};
  cs.chains = {random_matrix(make_key(13), 5, 3), random_matrix(make_key(14), 5, 3)};
  std::stringstream ss;
  write_chainset_csv(ss, cs);
  CHECK(ss.str().rfind("chain,draw,mean_0,mean_1,scale_0\n", 0) == 0);
  const auto back = read_chainset_csv(ss);
  CHECK(back.layout == cs.layout);
  CHECK(back.chains == cs.chains);
  CHECK(back.pooled_theta().at("scale").rows() == 10);

  SamplerConfig cfg;
  cfg.kind = SamplerKind::mala;
  cfg.mala_step = 0.3;
  const nlohmann::json j = cfg;
  const auto cfg2 = j.get<SamplerConfig>();
  CHECK(cfg2.kind == SamplerKind::mala);
  CHECK(cfg2.mala_step == 0.3);
  CHECK(nlohmann::json(SamplerConfig{}).get<SamplerConfig>().mala_step == std::nullopt);
}

TEST_CASE("split R-hat") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Matrix iid = random_matrix(fold_in(make_key(20), s), 1000, 4);
    const double r = split_rhat(iid);
    CHECK(r >= 0.99);
    CHECK(r <= 1.02);
    CHECK(r == doctest::Approx(oracle_split_rhat(iid)).epsilon(1e-12));
  }
  Matrix apart = random_matrix(make_key(21), 1000, 2);
  apart.col(1).array() += 5.0;
  // Fully separated chains: rank normalization maps each chain onto one half
  // of the normal, so split R-hat tends to sqrt(1 + (8/pi) / (3 (1 - 2/pi))).
  const double limit = std::sqrt(1.0 + (8.0 / std::numbers::pi) / (3.0 * (1.0 - 2.0 / std::numbers::pi)));
  CHECK(split_rhat(apart) == doctest::Approx(limit).epsilon(0.01));
  CHECK(classic_rhat(split_chains(apart)) > 2.0);
  Matrix shifted = random_matrix(make_key(22), 1000, 4);
  shifted.col(0).array() += 1.0;
  CHECK(split_rhat(shifted) > 1.1);

  // Duplicated chains: between-chain variance comes only from the split halves.
  const Matrix one = random_matrix(make_key(23), 200, 1);
  Matrix dup(200, 3);
  dup << one, one, one;
  CHECK(std::isfinite(split_rhat(dup)));
  CHECK(split_rhat(dup) == doctest::Approx(oracle_split_rhat(dup)).epsilon(1e-12));
  // Odd length drops the middle draw.
  const Matrix odd = random_matrix(make_key(24), 101, 3);
  CHECK(split_rhat(odd) == doctest::Approx(oracle_split_rhat(odd)).epsilon(1e-12));

  CHECK(split_rhat(Matrix::Ones(100, 4)) == INFINITY);
  CHECK_THROWS_AS(split_rhat(Matrix::Zero(3, 4)), ContractError);
}

TEST_CASE("effective sample size") {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Matrix iid = random_matrix(fold_in(make_key(30), s), 1000, 4);
    const double rel = ess_bulk(iid) / 4000.0;
    CHECK(rel >= 0.8);
    CHECK(rel <= 1.2);
    CHECK(ess_tail(iid) / 4000.0 > 0.6);
  }
  const double rho = 0.9;
  const Matrix x = ar1(make_key(31), 10000, 4, rho);
  const double expected = 40000.0 * (1 - rho) / (1 + rho);
  MESSAGE("AR(1) ESS bulk " << ess_bulk(x) << " raw " << ess_raw(x) << " expected " << expected);
  CHECK(std::abs(ess_bulk(x) / expected - 1.0) < 0.25);
  CHECK(std::abs(ess_raw(x) / expected - 1.0) < 0.25);

  // Scale regimes that persist make extremes cluster in time while the
  // symmetric signs keep the bulk uncorrelated.
  const Matrix u = random_matrix(make_key(32), 4000, 4);
  const Matrix a = ar1(make_key(33), 4000, 4, 0.995);
  const Matrix heavy = (u.array() * (1.5 * a.array()).exp()).matrix();
  MESSAGE("constructed chain: bulk " << ess_bulk(heavy) << " tail " << ess_tail(heavy));
  CHECK(ess_tail(heavy) < ess_bulk(heavy));

  CHECK(std::isnan(ess_bulk(Matrix::Zero(50, 2))));
  CHECK(std::isnan(ess_tail(Matrix::Zero(50, 2))));
}

TEST_CASE("short chains") {
  const Matrix x = random_matrix(make_key(34), 8, 2);
  CHECK(std::isfinite(ess_bulk(x)));
  CHECK(std::isfinite(ess_raw(random_matrix(make_key(35), 4, 1))));
}

TEST_CASE("diagnostics are invariant to monotone transforms") {
  const Matrix x = ar1(make_key(36), 500, 4, 0.5);
  const Matrix ex = x.array().exp().matrix();
  CHECK(std::abs(split_rhat(x) - split_rhat(ex)) < 1e-10);
  CHECK(std::abs(ess_bulk(x) - ess_bulk(ex)) < 1e-10);
  CHECK(std::abs(ess_tail(x) - ess_tail(ex)) < 1e-10);
  CHECK(rank_stats(x) == rank_stats(ex));
}

TEST_CASE("rank statistics") {
  const Matrix iid = random_matrix(make_key(40), 1000, 4);
  const auto counts = rank_stats(iid);
  REQUIRE(counts.rows() == 4);
  REQUIRE(counts.cols() == 20);
  const boost::math::chi_squared chi2(19);
  for (int c = 0; c < 4; ++c) {
    CHECK(counts.row(c).sum() == 1000);
    double stat = 0;
    for (int b = 0; b < 20; ++b) stat += (counts(c, b) - 50.0) * (counts(c, b) - 50.0) / 50.0;
    CHECK(boost::math::cdf(boost::math::complement(chi2, stat)) > 0.01);
  }
  Matrix shifted = iid;
  shifted.col(2).array() += 1.0;
  const auto sc = rank_stats(shifted);
  CHECK(sc.row(2).rightCols(10).sum() > 700);
  CHECK(sc.row(0).rightCols(10).sum() < 500);
}

TEST_CASE("diagnose and acceptance flags") {
  ChainSet cs;
  cs.layout = ParamLayout{{"a", "b"}, {1, 1}};
  for (int c = 0; c < 4; ++c) {
    Matrix m(1000, 2);
    m.col(0) = random_matrix(fold_in(make_key(41), c), 1000, 1);
    m.col(1) = ar1(fold_in(make_key(42), c), 1000, 1, 0.95).col(0).array() + (c == 0 ? 2.0 : 0.0);
    cs.chains.push_back(m);
  }
  const auto d = diagnose(cs);
  REQUIRE(d.split_rhat.size() == 2);
  CHECK(d.rhat_ok() == std::vector<bool>{true, false});
  CHECK(d.ess_ok() == std::vector<bool>{true, false});
  CHECK(d.rel_ess[0] == doctest::Approx(d.ess_bulk[0] / 4000.0));
  CHECK(diagnose_ess_only(cs).split_rhat.empty());

  Diagnostics edge;
  edge.split_rhat = {1.0499, 1.05, 1.2};
  edge.rel_ess = {0.5, 0.5001, 0.1};
  CHECK(edge.rhat_ok() == std::vector<bool>{true, false, false});
  CHECK(edge.ess_ok() == std::vector<bool>{false, true, false});
}
