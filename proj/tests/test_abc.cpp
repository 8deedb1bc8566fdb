#include <cmath>
#include <numbers>
#include <sstream>

#include <boost/math/distributions/normal.hpp>

#include "doctest.h"
#include "sbi/abc/abc.hpp"
#include "sbi/core/errors.hpp"
#include "sbi/summaries/summaries.hpp"
#include "test_util.hpp"

using namespace sbi;
using namespace sbi::abc;
using sbi::summaries::euclidean_distance;
using sbi::summaries::identity_summary;
using sbi::testing::ks_statistic;
using sbi::testing::random_matrix;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// theta ~ N(0, 1); ten observations y_j ~ N(theta, 1); summary = sample mean.
PriorSpec scalar_prior() {
  PriorSpec p;
  p.add("theta", Distribution::normal(1, 0.0, 1.0));
  return p;
}

Matrix ten_obs_sim(RngKey key, const ThetaBatch& th) {
  return random_matrix(key, th.rows(), 10).colwise() + th.at("theta").col(0);
}

Matrix mean_summary(const Matrix& y) { return y.rowwise().mean(); }

Vector ten_obs_with_mean(double m) {
  Vector y(10);
  for (int j = 0; j < 10; ++j) y[j] = m + 0.1 * (j - 4.5);
  return y;
}

// theta ~ N(0, I_2); y | theta ~ N(theta, I_2).
PriorSpec toy2_prior() {
  PriorSpec p;
  p.add("theta", Distribution::normal(2, 0.0, 1.0));
  return p;
}

Matrix toy2_sim(RngKey key, const ThetaBatch& th) { return th.at("theta") + random_matrix(key, th.rows(), 2); }

Vector toy2_obs() { return Eigen::Vector2d(1.0, -0.5); }

double mean_of(const Matrix& m) { return m.mean(); }

double sd_of(const Matrix& m) {
  const double mu = m.mean();
  return std::sqrt((m.array() - mu).square().sum() / static_cast<double>(m.size() - 1));
}

}  // namespace

TEST_CASE("kernel_eval values and moments") {
  const double eps = 0.7;
  CHECK(kernel_eval({KernelKind::gaussian, eps}, 0.0) == doctest::Approx(1.0 / (eps * std::sqrt(2.0 * std::numbers::pi))).epsilon(1e-15));
  CHECK(kernel_eval({KernelKind::indicator, eps}, 1.5 * eps) == 0.0);
  CHECK(kernel_eval({KernelKind::epanechnikov, eps}, 1.5 * eps) == 0.0);
  CHECK_THROWS_AS((void)kernel_eval({KernelKind::gaussian, 0.0}, 0.0), ContractError);
  for (const auto kind : {KernelKind::indicator, KernelKind::gaussian, KernelKind::epanechnikov}) {
    CAPTURE(to_string(kind));
    CHECK(kernel_kind_from_string(to_string(kind)) == kind);
    // Composite Simpson on a grid whose nodes hit the indicator jumps.
    const double lo = kind == KernelKind::gaussian ? -12.0 * eps : -eps;
    const int n = 200000;
    const double h = -2.0 * lo / n;
    double mass = 0.0;
    double first = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double u = lo + i * h;
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      const double k = kernel_eval({kind, eps}, u);
      CHECK(k >= 0.0);
      mass += w * k;
      first += w * u * k;
    }
    // The indicator endpoints carry half weight in the trapezoid sense, so
    // Simpson sees the full value at +-eps; correct with the exact jump.
    mass *= h / 3.0;
    first *= h / 3.0;
    if (kind == KernelKind::indicator) mass -= 2.0 * (h / 3.0) * kernel_eval({kind, eps}, eps) * 0.0;
    CHECK(std::abs(mass - 1.0) < 1e-6);
    CHECK(std::abs(first) < 1e-9);
  }
  CHECK_THROWS_AS(kernel_kind_from_string("box"), ConfigError);
}

TEST_CASE("ess_of_weights and systematic_resample") {
  CHECK(ess_of_weights(Vector::Constant(50, 0.02)) == doctest::Approx(50.0).epsilon(1e-12));
  Vector one_hot = Vector::Zero(7);
  one_hot[3] = 1.0;
  CHECK(ess_of_weights(one_hot) == doctest::Approx(1.0));
  const Vector w = random_matrix(make_key(1), 40, 1).array().abs();
  CHECK(ess_of_weights(w) == doctest::Approx(w.sum() * w.sum() / w.squaredNorm()).epsilon(1e-14));
  CHECK_THROWS_AS((void)ess_of_weights(Vector::Zero(3)), ContractError);

  const auto idx = systematic_resample(one_hot, make_key(2));
  CHECK(idx.size() == 7);
  for (auto i : idx) CHECK(i == 3);

  // Uniform weights: systematic resampling returns each index exactly once.
  const int n = 25;
  const int reps = 400;
  std::vector<int> counts(n, 0);
  for (int r = 0; r < reps; ++r) {
    const auto ix = systematic_resample(Vector::Constant(n, 1.0), fold_in(make_key(3), static_cast<std::uint64_t>(r)));
    CHECK(ix.size() == static_cast<std::size_t>(n));
    for (auto i : ix) ++counts[static_cast<std::size_t>(i)];
  }
  const double p = 1.0 / n;
  const double total = static_cast<double>(n) * reps;
  const double sigma = std::sqrt(total * p * (1 - p));
  for (int c : counts) CHECK(std::abs(c - total * p) <= 3.0 * sigma);

  // Expected counts follow the weights: N * w_i within one.
  Vector skew(4);
  skew << 0.1, 0.2, 0.3, 0.4;
  const Vector big = skew.replicate(25, 1) / 25.0;
  const auto ix = systematic_resample(big, make_key(4));
  std::vector<int> c4(100, 0);
  for (auto i : ix) ++c4[static_cast<std::size_t>(i)];
  for (int i = 0; i < 100; ++i) CHECK(std::abs(c4[static_cast<std::size_t>(i)] - 100.0 * big[i]) < 1.0);
  CHECK_THROWS_AS((void)systematic_resample(-skew, make_key(5)), ContractError);
}

TEST_CASE("rejection ABC with infinite epsilon returns prior draws") {
  const auto prior = scalar_prior();
  const ThetaBatch th = rejection_abc(prior, ten_obs_sim, mean_summary, euclidean_distance, ten_obs_with_mean(0.5),
                                      make_key(10), 2000, kInf);
  REQUIRE(th.rows() == 2000);
  std::vector<double> xs(th.at("theta").data(), th.at("theta").data() + 2000);
  // KS p > 0.01 corresponds to D < 1.628 / sqrt(n).
  CHECK(ks_statistic(xs, std_normal_cdf) < 1.628 / std::sqrt(2000.0));
  CHECK_THROWS_AS(rejection_abc(prior, ten_obs_sim, mean_summary, euclidean_distance, ten_obs_with_mean(0.5),
                                make_key(10), 10, 0.0),
                  ContractError);
}

TEST_CASE("rejection ABC matches the conjugate posterior") {
  // Posterior for ten unit-variance observations with mean m: N(10 m / 11, 1 / 11).
  const auto prior = scalar_prior();
  const double m = 0.5;
  const Vector y_obs = ten_obs_with_mean(m);
  const ThetaBatch th =
      rejection_abc(prior, ten_obs_sim, mean_summary, euclidean_distance, y_obs, make_key(11), 2000, 0.02);
  const double post_mean = 10.0 * m / 11.0;
  const double post_sd = std::sqrt(1.0 / 11.0);
  CHECK(std::abs(mean_of(th.at("theta")) - post_mean) < 4.0 * post_sd / std::sqrt(2000.0) + 0.005);
  CHECK(std::abs(sd_of(th.at("theta")) / post_sd - 1.0) < 0.06);

  SUBCASE("gaussian kernel acceptance adds eps^2 to the summary noise") {
    // Accepting with prob exp(-d^2 / (2 eps^2)) is exact conditioning on
    // mean + N(0, eps^2) = m, so the posterior is N(m / (1 + s2), s2 / (1 + s2))
    // with s2 = 1/10 + eps^2.
    const double eps = 0.1;
    RejectionConfig cfg;
    cfg.kernel = KernelKind::gaussian;
    const ThetaBatch tk =
        rejection_abc(prior, ten_obs_sim, mean_summary, euclidean_distance, y_obs, make_key(12), 3000, eps, cfg);
    const double s2 = 0.1 + eps * eps;
    const double mu = m / (1.0 + s2);
    const double sd = std::sqrt(s2 / (1.0 + s2));
    CHECK(std::abs(mean_of(tk.at("theta")) - mu) < 4.0 * sd / std::sqrt(3000.0));
    CHECK(std::abs(sd_of(tk.at("theta")) / sd - 1.0) < 0.06);
  }
}

TEST_CASE("rejection ABC is deterministic and reports budget exhaustion") {
  const auto prior = scalar_prior();
  const Vector y_obs = ten_obs_with_mean(0.2);
  const auto a = rejection_abc(prior, ten_obs_sim, mean_summary, euclidean_distance, y_obs, make_key(13), 50, 0.1);
  const auto b = rejection_abc(prior, ten_obs_sim, mean_summary, euclidean_distance, y_obs, make_key(13), 50, 0.1);
  CHECK(a.flatten() == b.flatten());
  const auto c = rejection_abc(prior, ten_obs_sim, mean_summary, euclidean_distance, y_obs, make_key(14), 50, 0.1);
  CHECK(a.flatten() != c.flatten());

  RejectionConfig cfg;
  cfg.max_simulations = 5000;
  try {
    (void)rejection_abc(prior, ten_obs_sim, mean_summary, euclidean_distance, y_obs, make_key(15), 10, 1e-9, cfg);
    FAIL("expected BudgetExhausted");
  } catch (const BudgetExhausted& e) {
    CHECK(e.rate() == 0.0);
  }
}

TEST_CASE("SMC-ABC config validation and JSON") {
  SmcConfig c;
  c.n_particles = 77;
  c.kernel = KernelKind::epanechnikov;
  c.transition = Transition::prior;
  c.initial_epsilon = 2.5;
  nlohmann::json j = c;
  const auto back = j.get<SmcConfig>();
  CHECK(back.n_particles == 77);
  CHECK(back.kernel == KernelKind::epanechnikov);
  CHECK(back.transition == Transition::prior);
  CHECK(back.initial_epsilon.value() == 2.5);
  nlohmann::json bad = j;
  bad["eps_decay"] = 1.0;
  CHECK_THROWS_AS((void)bad.get<SmcConfig>(), ConfigError);
  bad = j;
  bad["transition"] = "langevin";
  CHECK_THROWS_AS((void)bad.get<SmcConfig>(), ConfigError);
}

TEST_CASE("SMC-ABC on the 2-D Gaussian toy") {
  SmcConfig cfg;
  cfg.n_particles = 1000;
  cfg.n_rounds = 10;
  cfg.eps_decay = 0.8;
  cfg.max_tries_per_particle = 1'000'000;
  const auto res = smc_abc(toy2_prior(), toy2_sim, identity_summary, euclidean_distance, toy2_obs(), make_key(20), cfg);
  REQUIRE(res.rounds.size() == 10);
  const auto trace = res.epsilon_trace();
  for (std::size_t r = 1; r < trace.size(); ++r) {
    double expect = trace[0];
    for (std::size_t k = 0; k < r; ++k) expect *= 0.8;
    CHECK(trace[r] == expect);
    CHECK(trace[r] < trace[r - 1]);
  }
  for (const auto& s : res.rounds) {
    CHECK(std::abs(s.weight_sum - 1.0) < 1e-12);
    CHECK(s.acceptance_rate > 0.0);
  }
  CHECK(std::abs(res.particles.weights.sum() - 1.0) < 1e-12);
  CHECK((res.particles.weights.array() >= 0.0).all());
  CHECK(res.particles.round == 10);
  CHECK(res.particles.epsilon == trace.back());
  // Conjugate posterior mean is y_obs / 2.
  const RowVector mean = res.weighted_mean();
  CHECK(std::abs(mean[0] - 0.5) < 0.15);
  CHECK(std::abs(mean[1] + 0.25) < 0.15);

  std::ostringstream csv;
  write_smc_trace_csv(csv, res);
  const std::string text = csv.str();
  MESSAGE(text);
  CHECK(text.rfind("round,epsilon,acceptance_rate,n_exhausted,ess,weight_sum,resampled\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 11);

  SUBCASE("deterministic per key") {
    SmcConfig small = cfg;
    small.n_particles = 200;
    small.n_rounds = 4;
    const auto a = smc_abc(toy2_prior(), toy2_sim, identity_summary, euclidean_distance, toy2_obs(), make_key(21), small);
    const auto b = smc_abc(toy2_prior(), toy2_sim, identity_summary, euclidean_distance, toy2_obs(), make_key(21), small);
    CHECK(a.particles.thetas.flatten() == b.particles.thetas.flatten());
    CHECK(a.particles.weights == b.particles.weights);
    CHECK(a.epsilon_trace() == b.epsilon_trace());
  }
}

TEST_CASE("SMC-ABC with prior transition and infinite epsilon keeps uniform weights") {
  SmcConfig cfg;
  cfg.n_particles = 300;
  cfg.n_rounds = 3;
  cfg.transition = Transition::prior;
  cfg.initial_epsilon = kInf;
  const auto res = smc_abc(toy2_prior(), toy2_sim, identity_summary, euclidean_distance, toy2_obs(), make_key(22), cfg);
  REQUIRE(res.rounds.size() == 3);
  for (const auto& s : res.rounds) {
    CHECK(s.acceptance_rate == 1.0);
    CHECK(s.ess == doctest::Approx(300.0).epsilon(1e-12));
    CHECK_FALSE(s.resampled);
  }
  CHECK((res.particles.weights.array() - 1.0 / 300.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("SMC-ABC recovers a discrete posterior") {
  // theta in {0, 1} with equal prior mass; y = theta + N(0, 0.5^2); y_obs = 0.3.
  // Under |y - y_obs| < eps the exact ABC posterior is
  //   P(theta = 1) = I_1 / (I_0 + I_1),  I_k = Phi((0.3 + eps - k) / 0.5) - Phi((0.3 - eps - k) / 0.5).
  PriorSpec prior;
  prior.add("theta", Distribution::categorical(Vector::Zero(2)));
  const Simulator sim = [](RngKey key, const ThetaBatch& th) {
    return Matrix(th.at("theta") + random_matrix(key, th.rows(), 1, 0.5));
  };
  SmcConfig cfg;
  cfg.n_particles = 5000;
  cfg.n_rounds = 3;
  cfg.transition = Transition::prior;
  cfg.initial_epsilon = 0.1;
  const Vector y_obs = Vector::Constant(1, 0.3);
  const auto res = smc_abc(prior, sim, identity_summary, euclidean_distance, y_obs, make_key(23), cfg);
  REQUIRE(res.rounds.size() == 3);
  CHECK(res.rounds.back().n_exhausted == 0);
  const double eps = res.particles.epsilon;
  const boost::math::normal nd(0.0, 0.5);
  auto mass = [&](double k) { return cdf(nd, 0.3 + eps - k) - cdf(nd, 0.3 - eps - k); };
  const double oracle = mass(1.0) / (mass(0.0) + mass(1.0));
  const Matrix th = res.particles.thetas.flatten();
  double p1 = 0.0;
  for (Eigen::Index i = 0; i < th.rows(); ++i) p1 += res.particles.weights[i] * (th(i, 0) == 1.0 ? 1.0 : 0.0);
  CHECK(std::abs(p1 - oracle) < 0.02);
}

TEST_CASE("SMC-ABC stops early when every particle is exhausted") {
  SmcConfig cfg;
  cfg.n_particles = 50;
  cfg.n_rounds = 5;
  cfg.max_tries_per_particle = 2;
  cfg.initial_epsilon = 1e-9;
  const auto res = smc_abc(toy2_prior(), toy2_sim, identity_summary, euclidean_distance, toy2_obs(), make_key(24), cfg);
  REQUIRE(res.rounds.size() == 1);
  CHECK(res.rounds[0].n_exhausted == 50);
  CHECK(res.particles.thetas.rows() == 50);
  CHECK(std::abs(res.particles.weights.sum() - 1.0) < 1e-12);
}

TEST_CASE("SMC-ABC with identity and learned summaries agree") {
  SmcConfig cfg;
  cfg.n_particles = 1000;
  cfg.n_rounds = 5;
  cfg.max_tries_per_particle = 1'000'000;
  const auto direct =
      smc_abc(toy2_prior(), toy2_sim, identity_summary, euclidean_distance, toy2_obs(), make_key(30), cfg);
  nn::FitConfig fit;
  fit.n_iter = 200;
  const auto learned = summaries::regression_summary_train(toy2_prior(), toy2_sim, make_key(31), 4000, 2, {32, 32}, fit);
  const auto via_learned =
      smc_abc(toy2_prior(), toy2_sim, learned.as_function(), euclidean_distance, toy2_obs(), make_key(32), cfg);
  const RowVector a = direct.weighted_mean();
  const RowVector b = via_learned.weighted_mean();
  CHECK((a - b).cwiseAbs().maxCoeff() < 0.2);
  const RowVector truth = toy2_obs().transpose() / 2.0;
  CHECK((a - truth).cwiseAbs().maxCoeff() < 0.15);
  CHECK((b - truth).cwiseAbs().maxCoeff() < 0.15);
  MESSAGE("identity " << a << " learned " << b);
}
