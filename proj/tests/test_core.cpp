#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>

#include "doctest.h"
#include "sbi/core/dataset.hpp"
#include "sbi/core/distributions.hpp"
#include "sbi/core/errors.hpp"
#include "sbi/core/prior.hpp"
#include "sbi/core/rng.hpp"

using namespace sbi;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

PriorSpec slcp_like_prior() {
  PriorSpec p;
  p.add("theta", Distribution::uniform(5, -3.0, 3.0));
  return p;
}

PriorSpec gaussian_prior() {
  PriorSpec p;
  p.add("mean", Distribution::normal(2, 0.0, 1.0));
  p.add("scale", Distribution::half_normal(1, 1.0));
  return p;
}

Dataset toy_dataset(Eigen::Index n, RngKey key) {
  const auto prior = gaussian_prior();
  Dataset d;
  d.theta = prior_sample(prior, key, n);
  d.y = d.theta.at("mean") * 2.0;
  return d;
}

// Trapezoid integral of exp(log_prob) on [lo, hi].
double integrate_density(const Distribution& dist, double lo, double hi, int n) {
  const double h = (hi - lo) / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + h * i;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    acc += w * std::exp(dist.log_prob(std::span<const double>(&x, 1)));
  }
  return acc * h;
}

double mean_log_prob(const Distribution& dist, RngKey key, Eigen::Index n) {
  Generator gen(key);
  return dist.log_prob(dist.sample(gen, n)).mean();
}

}  // namespace

TEST_CASE("fold_in is deterministic and separates indices") {
  const RngKey k = make_key(42);
  CHECK(fold_in(k, 0) != fold_in(k, 1));
  CHECK(fold_in(k, 7) == fold_in(k, 7));
  std::set<RngKey> seen;
  for (std::uint64_t i = 0; i < 10000; ++i) seen.insert(fold_in(k, i));
  CHECK(seen.size() == 10000);
  CHECK(fold_in(make_key(1), 3) != fold_in(make_key(2), 3));
  const auto keys = split(k, 4);
  REQUIRE(keys.size() == 4);
  CHECK(keys[2] == fold_in(k, 2));
}

TEST_CASE("uniform draws from folded keys pass a chi-square test") {
  constexpr int kBins = 64;
  constexpr int kDraws = 100000;
  const RngKey root = make_key(2024);
  std::vector<int> counts(kBins, 0);
  for (int i = 0; i < kDraws; ++i) {
    Generator gen(fold_in(root, static_cast<std::uint64_t>(i)));
    ++counts[static_cast<std::size_t>(gen.uniform() * kBins)];
  }
  const double expected = static_cast<double>(kDraws) / kBins;
  double stat = 0.0;
  for (int c : counts) stat += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared chi2(kBins - 1);
  CHECK(stat < boost::math::quantile(chi2, 0.99));
}

TEST_CASE("generator helpers") {
  Generator gen(make_key(5));
  for (int i = 0; i < 1000; ++i) {
    const double u = gen.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(gen.uniform_open_low() > 0.0);
    CHECK(gen.below(7) < 7u);
  }
  Generator a(make_key(9));
  Generator b(make_key(9));
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
}

TEST_CASE("distribution validation") {
  CHECK_THROWS_AS(Distribution::normal(2, 0.0, 0.0), ConfigError);
  CHECK_THROWS_AS(Distribution::half_normal(1, -1.0), ConfigError);
  CHECK_THROWS_AS(Distribution::uniform(1, 1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(Distribution::categorical(Vector::Constant(2, kInf)), ConfigError);
  CHECK_THROWS_AS(Distribution::mixture(Vector::Ones(2), {}), ConfigError);
  const auto mix = Distribution::mixture(Vector::Constant(2, 3.0),
                                         {DiagMvNormal{Vector::Zero(1), Vector::Ones(1)},
                                          DiagMvNormal{Vector::Ones(1), Vector::Ones(1)}});
  CHECK(std::get<MixtureSameFamily>(mix.kind()).weights.sum() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("prior_sample on a bounded uniform prior") {
  const auto prior = slcp_like_prior();
  const auto batch = prior_sample(prior, make_key(1), 10000);
  const Matrix& th = batch.at("theta");
  REQUIRE(th.rows() == 10000);
  REQUIRE(th.cols() == 5);
  CHECK(th.minCoeff() >= -3.0);
  CHECK(th.maxCoeff() <= 3.0);
  for (Eigen::Index j = 0; j < 5; ++j) CHECK(std::abs(th.col(j).mean()) < 0.1);
}

TEST_CASE("prior_sample shape and names") {
  PriorSpec p;
  p.add("mean", Distribution::normal(2, 0.0, 1.0));
  const auto batch = prior_sample(p, make_key(3), 1);
  REQUIRE(batch.entries().size() == 1);
  CHECK(batch.entries()[0].first == "mean");
  CHECK(batch.at("mean").rows() == 1);
  CHECK(batch.at("mean").cols() == 2);
  CHECK_THROWS_AS(prior_sample(p, make_key(3), 0), ContractError);
}

TEST_CASE("half-normal mean") {
  PriorSpec p;
  p.add("scale", Distribution::half_normal(1, 1.0));
  const auto batch = prior_sample(p, make_key(11), 100000);
  CHECK(std::abs(batch.at("scale").mean() - std::sqrt(2.0 / std::numbers::pi)) < 0.02);
  CHECK(batch.at("scale").minCoeff() >= 0.0);
}

TEST_CASE("prior_sample is reproducible") {
  const auto prior = gaussian_prior();
  const auto a = prior_sample(prior, make_key(8), 50).flatten();
  const auto b = prior_sample(prior, make_key(8), 50).flatten();
  CHECK(a == b);
  const auto c = prior_sample(prior, make_key(9), 50).flatten();
  CHECK(a != c);
}

TEST_CASE("prior_log_prob closed forms") {
  const auto uni = slcp_like_prior();
  ThetaBatch zero;
  zero.add("theta", Matrix::Zero(1, 5));
  CHECK(prior_log_prob(uni, zero)[0] == doctest::Approx(5.0 * std::log(1.0 / 6.0)).epsilon(1e-14));
  ThetaBatch out;
  Matrix o = Matrix::Zero(1, 5);
  o(0, 0) = 4.0;
  out.add("theta", o);
  CHECK(prior_log_prob(uni, out)[0] == -kInf);

  const auto g = gaussian_prior();
  ThetaBatch t;
  t.add("mean", Matrix::Zero(1, 2));
  t.add("scale", Matrix::Ones(1, 1));
  const double expected = -std::log(2.0 * std::numbers::pi) + std::log(std::sqrt(2.0 / std::numbers::pi) * std::exp(-0.5));
  CHECK(prior_log_prob(g, t)[0] == doctest::Approx(expected).epsilon(1e-14));

  ThetaBatch neg;
  neg.add("mean", Matrix::Zero(1, 2));
  neg.add("scale", Matrix::Constant(1, 1, -0.5));
  CHECK(prior_log_prob(g, neg)[0] == -kInf);
}

TEST_CASE("prior_log_prob rejects mismatched batches") {
  const auto g = gaussian_prior();
  ThetaBatch wrong_name;
  wrong_name.add("mu", Matrix::Zero(1, 2));
  wrong_name.add("scale", Matrix::Ones(1, 1));
  CHECK_THROWS_AS(prior_log_prob(g, wrong_name), ContractError);
  ThetaBatch wrong_width;
  wrong_width.add("mean", Matrix::Zero(1, 3));
  wrong_width.add("scale", Matrix::Ones(1, 1));
  CHECK_THROWS_AS(prior_log_prob(g, wrong_width), ContractError);
  ThetaBatch missing;
  missing.add("mean", Matrix::Zero(1, 2));
  CHECK_THROWS_AS(prior_log_prob(g, missing), ContractError);
}

TEST_CASE("prior sample/log_prob consistency") {
  const auto g = gaussian_prior();
  const auto s = prior_sample(g, make_key(77), 1000);
  CHECK(prior_log_prob(g, s).allFinite());
  PriorSpec dup;
  dup.add("a", Distribution::normal(1, 0, 1));
  CHECK_THROWS_AS(dup.add("a", Distribution::normal(1, 0, 1)), ConfigError);
  CHECK(g.total_dim() == 3);
}

TEST_CASE("one-dimensional densities integrate to one") {
  const auto mix = Distribution::mixture(
      Vector::Constant(2, 0.5), {DiagMvNormal{Vector::Constant(1, -1.0), Vector::Constant(1, 0.5)},
                                 DiagMvNormal{Vector::Constant(1, 2.0), Vector::Constant(1, 1.5)}});
  CHECK(integrate_density(Distribution::normal(1, 0.3, 1.7), -20, 20, 40000) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(integrate_density(Distribution::half_normal(1, 2.0), 0, 20, 40000) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(integrate_density(Distribution::uniform(1, -3, 3), -3, 3, 6000) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(integrate_density(Distribution::diag_mv_normal(Vector::Constant(1, 1.0), Vector::Constant(1, 0.2)), -5, 5,
                          40000) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(integrate_density(mix, -15, 15, 40000) == doctest::Approx(1.0).epsilon(1e-3));

  const auto cat = Distribution::categorical((Vector(3) << 0.1, -2.0, 1.3).finished());
  double total = 0.0;
  for (int k = 0; k < 3; ++k) {
    const double x = k;
    total += std::exp(cat.log_prob(std::span<const double>(&x, 1)));
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  const double half = 0.5;
  CHECK(cat.log_prob(std::span<const double>(&half, 1)) == -kInf);
}

TEST_CASE("mean log_prob matches negative entropy") {
  const double pi = std::numbers::pi;
  const double sigma = 1.7;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::abs(b); };

  CHECK(rel(mean_log_prob(Distribution::normal(1, 0.3, sigma), make_key(1), 100000),
            -0.5 * std::log(2 * pi * std::numbers::e * sigma * sigma)) < 0.01);
  CHECK(rel(mean_log_prob(Distribution::half_normal(1, sigma), make_key(2), 100000),
            -(0.5 * std::log(pi * sigma * sigma / 2.0) + 0.5)) < 0.01);
  CHECK(rel(mean_log_prob(Distribution::uniform(1, -3, 3), make_key(3), 100000), -std::log(6.0)) < 0.01);
  const Vector scales = (Vector(2) << 0.5, 2.0).finished();
  CHECK(rel(mean_log_prob(Distribution::diag_mv_normal(Vector::Zero(2), scales), make_key(4), 100000),
            -(std::log(2 * pi * std::numbers::e) + std::log(0.5) + std::log(2.0))) < 0.01);

  const Vector logits = (Vector(3) << 0.1, -2.0, 1.3).finished();
  const Vector p = logits.array().exp() / logits.array().exp().sum();
  const double cat_entropy = -(p.array() * p.array().log()).sum();
  CHECK(rel(mean_log_prob(Distribution::categorical(logits), make_key(5), 100000), -cat_entropy) < 0.01);

  // Mixture entropy has no closed form; a fine quadrature is the oracle.
  const auto mix = Distribution::mixture(
      Vector::Constant(2, 0.5), {DiagMvNormal{Vector::Constant(1, -1.0), Vector::Constant(1, 0.5)},
                                 DiagMvNormal{Vector::Constant(1, 2.0), Vector::Constant(1, 1.5)}});
  double mix_entropy = 0.0;
  const double h = 1e-3;
  for (double x = -15; x <= 15; x += h) {
    const double lp = mix.log_prob(std::span<const double>(&x, 1));
    mix_entropy -= std::exp(lp) * lp * h;
  }
  CHECK(rel(mean_log_prob(mix, make_key(6), 100000), -mix_entropy) < 0.01);
}

TEST_CASE("sample draws are bit-reproducible per key") {
  for (const auto& dist :
       {Distribution::normal(2, 0, 1), Distribution::half_normal(1, 1), Distribution::uniform(3, 0, 1),
        Distribution::categorical(Vector::Zero(4))}) {
    Generator a(make_key(12));
    Generator b(make_key(12));
    CHECK(dist.sample(a, 20) == dist.sample(b, 20));
  }
}

TEST_CASE("stack_data") {
  const auto d1 = toy_dataset(100, make_key(1));
  const auto d2 = toy_dataset(50, make_key(2));
  const auto same = stack_data(std::nullopt, d2);
  CHECK(same.y == d2.y);
  const auto s = stack_data(d1, d2);
  CHECK(s.rows() == 150);
  const auto head = s.middle_rows(0, 100);
  CHECK(head.y == d1.y);
  CHECK(head.theta.flatten() == d1.theta.flatten());
  CHECK(s.middle_rows(100, 50).theta.flatten() == d2.theta.flatten());

  Dataset other = d2;
  other.y = Matrix::Zero(50, 3);
  CHECK_THROWS_AS(stack_data(d1, other), ContractError);
  Dataset renamed;
  renamed.y = d2.y;
  renamed.theta.add("mu", d2.theta.at("mean"));
  renamed.theta.add("scale", d2.theta.at("scale"));
  CHECK_THROWS_AS(stack_data(d1, renamed), ContractError);
}

TEST_CASE("split_train_val") {
  const auto d = toy_dataset(10, make_key(4));
  const auto [train, val] = split_train_val(d, 0.1, make_key(5));
  CHECK(train.rows() == 9);
  CHECK(val.rows() == 1);

  std::multiset<double> original;
  std::multiset<double> joined;
  for (Eigen::Index i = 0; i < d.rows(); ++i) original.insert(d.theta.at("scale")(i, 0));
  for (Eigen::Index i = 0; i < train.rows(); ++i) joined.insert(train.theta.at("scale")(i, 0));
  for (Eigen::Index i = 0; i < val.rows(); ++i) joined.insert(val.theta.at("scale")(i, 0));
  CHECK(original == joined);

  const auto [train2, val2] = split_train_val(d, 0.1, make_key(5));
  CHECK(train2.y == train.y);
  CHECK(val2.y == val.y);

  CHECK(split_train_val(toy_dataset(3, make_key(1)), 0.01, make_key(1)).second.rows() == 1);
  CHECK_THROWS_AS(split_train_val(toy_dataset(1, make_key(1)), 0.5, make_key(1)), ContractError);
  CHECK_THROWS_AS(split_train_val(d, 1.0, make_key(1)), ContractError);
}

TEST_CASE("drop_nonfinite removes and counts bad rows") {
  auto d = toy_dataset(5, make_key(6));
  d.y(1, 0) = std::numeric_limits<double>::quiet_NaN();
  d.y(3, 1) = kInf;
  const Matrix keep_theta = d.theta.flatten();
  CHECK(drop_nonfinite(d) == 2);
  CHECK(d.rows() == 3);
  CHECK(d.theta.flatten().row(1) == keep_theta.row(2));
  CHECK(drop_nonfinite(d) == 0);
}

TEST_CASE("dataset CSV round trip is exact") {
  auto d = toy_dataset(20, make_key(7));
  d.y(0, 0) = 0.1 + 0.2;
  std::stringstream ss;
  write_dataset_csv(ss, d);
  const std::string text = ss.str();
  CHECK(text.rfind("y_0,y_1,mean_0,mean_1,scale_0\n", 0) == 0);
  const auto back = read_dataset_csv(ss);
  CHECK(back.y == d.y);
  CHECK(back.theta.layout() == d.theta.layout());
  CHECK(back.theta.flatten() == d.theta.flatten());
  std::stringstream again;
  write_dataset_csv(again, back);
  CHECK(again.str() == text);

  std::stringstream bad("y_0,mean_0\n1,2,3\n");
  CHECK_THROWS_AS(read_dataset_csv(bad), ConfigError);
}

TEST_CASE("theta batch flatten round trip") {
  const auto g = gaussian_prior();
  const auto s = prior_sample(g, make_key(3), 7);
  const auto flat = s.flatten();
  CHECK(flat.cols() == 3);
  const auto back = ThetaBatch::unflatten(g.layout(), flat);
  CHECK(back.at("mean") == s.at("mean"));
  CHECK(back.at("scale") == s.at("scale"));
  CHECK(g.layout().column_labels() == std::vector<std::string>{"mean_0", "mean_1", "scale_0"});
  ThetaBatch b;
  b.add("a", Matrix::Zero(2, 1));
  CHECK_THROWS_AS(b.add("c", Matrix::Zero(3, 1)), ContractError);
  CHECK_THROWS_AS(b.add("a", Matrix::Zero(2, 1)), ContractError);
}
