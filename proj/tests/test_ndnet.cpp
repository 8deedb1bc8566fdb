#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "sbi/core/errors.hpp"
#include "sbi/ndnet/autodiff.hpp"
#include "sbi/ndnet/gradcheck.hpp"
#include "sbi/ndnet/made.hpp"
#include "sbi/ndnet/mlp.hpp"
#include "sbi/ndnet/optim.hpp"
#include "sbi/ndnet/params_io.hpp"

using namespace sbi;
using namespace sbi::nn;

namespace {

Tensor random_tensor(RngKey key, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Generator gen(key);
  Tensor t(r, c);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = scale * gen.normal();
  return t;
}

NetParams randomize(NetParams p, RngKey key, double scale) {
  std::uint64_t i = 0;
  for (auto& [_, t] : p) t = random_tensor(fold_in(key, i++), t.rows(), t.cols(), scale);
  return p;
}

double act(Activation a, double x) {
  switch (a) {
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0 ? x : 0.0;
    case Activation::gelu: return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
    case Activation::identity: return x;
  }
  return x;
}

// Straight-line reimplementation with explicit loops.
Tensor naive_mlp(const MlpSpec& spec, const NetParams& params, const Tensor& x) {
  std::vector<std::vector<double>> rows;
  Tensor out(x.rows(), spec.out_dim);
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    std::vector<double> h(x.row(n).data(), x.row(n).data() + x.cols());
    for (int l = 0; l < spec.n_linear(); ++l) {
      const Tensor& w = params.at("mlp/linear_" + std::to_string(l) + "/w");
      const Tensor& b = params.at("mlp/linear_" + std::to_string(l) + "/b");
      std::vector<double> next(static_cast<std::size_t>(w.cols()));
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        double acc = b(0, j);
        for (Eigen::Index i = 0; i < w.rows(); ++i) acc += h[static_cast<std::size_t>(i)] * w(i, j);
        const bool last = l == spec.n_linear() - 1;
        if (!last)
          acc = act(spec.activation, acc);
        else if (spec.final_activation)
          acc = act(*spec.final_activation, acc);
        next[static_cast<std::size_t>(j)] = acc;
      }
      h = std::move(next);
    }
    for (int j = 0; j < spec.out_dim; ++j) out(n, j) = h[static_cast<std::size_t>(j)];
  }
  return out;
}

}  // namespace

TEST_CASE("mlp_forward on zero parameters is zero") {
  MlpSpec spec{3, 2, {5, 4}, Activation::tanh, {}};
  auto params = mlp_init(spec, make_key(1));
  for (auto& [_, t] : params) t.setZero();
  const Tensor y = mlp_forward(spec, params, random_tensor(make_key(2), 6, 3));
  CHECK(y.isZero(0.0));
  CHECK(y.rows() == 6);
}

TEST_CASE("single identity linear layer returns its input") {
  MlpSpec spec{4, 4, {}, Activation::tanh, {}};
  NetParams params;
  params["mlp/linear_0/w"] = Tensor::Identity(4, 4);
  params["mlp/linear_0/b"] = Tensor::Zero(1, 4);
  const Tensor x = random_tensor(make_key(3), 5, 4);
  CHECK(mlp_forward(spec, params, x) == x);
}

TEST_CASE("mlp_forward matches a loop oracle") {
  for (auto a : {Activation::tanh, Activation::relu, Activation::gelu}) {
    MlpSpec spec{3, 2, {7, 5}, a, Activation::tanh};
    const auto params = randomize(mlp_init(spec, make_key(4)), make_key(5), 0.7);
    const Tensor x = random_tensor(make_key(6), 9, 3);
    const Tensor fast = mlp_forward(spec, params, x);
    const Tensor slow = naive_mlp(spec, params, x);
    CHECK((fast - slow).cwiseAbs().maxCoeff() < 1e-12);
  }
  MlpSpec spec{3, 2, {4}, Activation::tanh, {}};
  CHECK_THROWS_AS(mlp_forward(spec, mlp_init(spec, make_key(1)), Tensor::Zero(2, 4)), ContractError);
  CHECK_THROWS_AS((MlpSpec{0, 1, {}, Activation::tanh, {}}.validate()), ConfigError);
}

TEST_CASE("initializers") {
  MlpSpec spec{50, 3, {400}, Activation::tanh, {}};
  const auto fan = mlp_init(spec, make_key(7));
  const Tensor& w0 = fan.at("mlp/linear_0/w");
  const double sd = std::sqrt(w0.array().square().mean());
  CHECK(sd == doctest::Approx(1.0 / std::sqrt(50.0)).epsilon(0.03));
  CHECK(fan.at("mlp/linear_0/b").isZero(0.0));
  const auto fixed = mlp_init(spec, make_key(7), "mlp", Init::fixed(1e-3));
  CHECK(fixed.at("mlp/linear_0/w").cwiseAbs().maxCoeff() <= 2e-3);
  CHECK(mlp_init(spec, make_key(7)) == fan);
}

TEST_CASE("grad of half squared norm is the tensor") {
  NetParams p{{"w", random_tensor(make_key(8), 3, 4)}};
  const auto g = grad([](const VarParams& v) { return sum(square(param(v, "w"))) * 0.5; }, p);
  CHECK((g.at("w") - p.at("w")).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("grad of a constant loss is a zero tree") {
  NetParams p{{"w", random_tensor(make_key(9), 2, 2)}, {"b", random_tensor(make_key(10), 1, 2)}};
  const auto g = grad([](const VarParams&) { return Var(Tensor::Constant(1, 1, 3.0)); }, p);
  CHECK(g.at("w").isZero(0.0));
  CHECK(g.at("b").isZero(0.0));
}

TEST_CASE("two-layer MLP regression gradient matches finite differences") {
  MlpSpec spec{3, 2, {6}, Activation::tanh, {}};
  const Tensor x = random_tensor(make_key(11), 8, 3);
  const Tensor target = random_tensor(make_key(12), 8, 2);
  for (std::uint64_t point = 0; point < 3; ++point) {
    const auto params = randomize(mlp_init(spec, make_key(13)), fold_in(make_key(14), point), 0.5);
    const auto res = check_gradient(
        [&](const VarParams& p) { return mean(square(mlp_forward(spec, p, "mlp", Var(x)) - Var(target))); }, params);
    CHECK(res.max_rel_error < 1e-5);
    CHECK(res.n_checked == 3 * 6 + 6 + 6 * 2 + 2);
  }
}

TEST_CASE("every primitive passes a gradient check") {
  const Tensor a0 = random_tensor(make_key(20), 4, 3);
  const Tensor b0 = random_tensor(make_key(21), 4, 3);
  const Tensor pos = (random_tensor(make_key(22), 4, 3).array().abs() + 0.5).matrix();
  const Tensor m0 = random_tensor(make_key(23), 3, 2);
  const Tensor r0 = random_tensor(make_key(24), 1, 3);
  const Tensor c0 = random_tensor(make_key(25), 4, 1);
  const Tensor stacked = random_tensor(make_key(26), 12, 1);
  const Tensor weights = random_tensor(make_key(27), 4, 3);
  const NetParams p{{"a", a0}, {"b", b0}, {"pos", pos}, {"m", m0}, {"r", r0}, {"c", c0}, {"s", stacked}};
  const std::vector<int> perm{2, 0, 1};

  // Each loss contracts the op output against fixed weights so that the
  // gradient is not trivially uniform.
  auto contract = [&](const Var& v) {
    const Tensor w = random_tensor(make_key(99), v.rows(), v.cols());
    return sum(v * Var(w));
  };
  std::vector<std::pair<std::string, LossFn>> cases{
      {"add", [&](const VarParams& v) { return contract(param(v, "a") + param(v, "b")); }},
      {"sub", [&](const VarParams& v) { return contract(param(v, "a") - param(v, "b")); }},
      {"mul", [&](const VarParams& v) { return contract(param(v, "a") * param(v, "b")); }},
      {"neg", [&](const VarParams& v) { return contract(-param(v, "a")); }},
      {"scale", [&](const VarParams& v) { return contract(2.5 * param(v, "a") + 1.0); }},
      {"matmul", [&](const VarParams& v) { return contract(matmul(param(v, "a"), param(v, "m"))); }},
      {"add_row", [&](const VarParams& v) { return contract(add_row(param(v, "a"), param(v, "r"))); }},
      {"mul_col", [&](const VarParams& v) { return contract(mul_col(param(v, "a"), param(v, "c"))); }},
      {"add_col", [&](const VarParams& v) { return contract(add_col(param(v, "a"), param(v, "c"))); }},
      {"tanh", [&](const VarParams& v) { return contract(tanh(param(v, "a"))); }},
      {"relu", [&](const VarParams& v) { return contract(relu(param(v, "a"))); }},
      {"gelu", [&](const VarParams& v) { return contract(gelu(param(v, "a"))); }},
      {"exp", [&](const VarParams& v) { return contract(exp(param(v, "a"))); }},
      {"log", [&](const VarParams& v) { return contract(log(param(v, "pos"))); }},
      {"square", [&](const VarParams& v) { return contract(square(param(v, "a"))); }},
      {"clamp", [&](const VarParams& v) { return contract(clamp(param(v, "a"), -0.5, 0.5)); }},
      {"mean", [&](const VarParams& v) { return mean(square(param(v, "a"))); }},
      {"row_sum", [&](const VarParams& v) { return contract(row_sum(param(v, "a"))); }},
      {"logsumexp", [&](const VarParams& v) { return contract(logsumexp_rows(param(v, "a"))); }},
      {"concat", [&](const VarParams& v) { return contract(concat_cols({param(v, "a"), param(v, "c"), param(v, "b")})); }},
      {"slice", [&](const VarParams& v) { return contract(slice_cols(param(v, "a"), 1, 2)); }},
      {"permute", [&](const VarParams& v) { return contract(permute_cols(param(v, "a"), perm)); }},
      {"blocks", [&](const VarParams& v) { return contract(blocks_to_cols(param(v, "s"), 3)); }},
  };
  for (const auto& [name, fn] : cases) {
    CAPTURE(name);
    const auto res = check_gradient(fn, p);
    CAPTURE(res.worst_entry);
    CHECK(res.max_rel_error < 1e-5);
  }
}

TEST_CASE("graph construction errors") {
  Tape t1;
  Tape t2;
  const Var a = t1.leaf(Tensor::Ones(2, 2));
  const Var b = t2.leaf(Tensor::Ones(2, 2));
  CHECK_THROWS_AS(a + b, ContractError);
  CHECK_THROWS_AS(a + Var(Tensor::Ones(3, 2)), ContractError);
  CHECK_THROWS_AS(matmul(a, Var(Tensor::Ones(3, 1))), ContractError);
  CHECK_THROWS_AS(t1.backward(a), ContractError);
  CHECK_THROWS_AS(t2.backward(sum(a)), ContractError);
  CHECK_THROWS_AS(blocks_to_cols(Var(Tensor::Ones(5, 1)), 2), ContractError);
  const Var c = Var(Tensor::Ones(2, 2)) * 3.0;
  CHECK_FALSE(c.requires_grad());
  CHECK(t1.size() == 2);
}

TEST_CASE("logsumexp is stable for large inputs") {
  Tensor x(1, 2);
  x << 1000.0, 1000.0;
  CHECK(logsumexp_rows(Var(x)).item() == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("adam step semantics") {
  NetParams p{{"w", random_tensor(make_key(30), 2, 3)}};
  NetParams zero{{"w", Tensor::Zero(2, 3)}};
  auto [s1, p1] = adam_step(adam_init(p), p, zero);
  CHECK(s1.step == 1);
  CHECK(p1.at("w") == p.at("w"));

  NetParams g{{"w", random_tensor(make_key(31), 2, 3, 5.0)}};
  auto [s2, p2] = adam_step(adam_init(p), p, g);
  const Tensor delta = (p2.at("w") - p.at("w")).cwiseAbs();
  CHECK(delta.minCoeff() == doctest::Approx(1e-3).epsilon(1e-4));
  CHECK(delta.maxCoeff() == doctest::Approx(1e-3).epsilon(1e-4));
  // Steps move against the gradient.
  CHECK(((p2.at("w") - p.at("w")).array() * g.at("w").array() < 0).all());
}

TEST_CASE("adam converges on a convex quadratic") {
  const Tensor target = (Tensor(1, 3) << 0.1, -0.05, 0.08).finished();
  NetParams p{{"p", Tensor::Zero(1, 3)}};
  auto state = adam_init(p);
  for (int i = 0; i < 200; ++i) {
    NetParams g{{"p", p.at("p") - target}};
    std::tie(state, p) = adam_step(std::move(state), std::move(p), g);
  }
  CHECK((p.at("p") - target).norm() < 1e-2);
}

namespace {

// Scalar parameter p regressed onto the batch's y values.
Var pull_objective(const VarParams& params, const Dataset& batch, RngKey) {
  const Var& p = param(params, "p");
  const Tensor t = Tensor::Constant(1, 1, batch.y.mean());
  return square(p - Var(t)) * 1.0;
}

Dataset constant_dataset(Eigen::Index n, double value) {
  Dataset d;
  d.y = Matrix::Constant(n, 1, value);
  d.theta.add("theta", Matrix::Zero(n, 1));
  return d;
}

}  // namespace

TEST_CASE("fit_loop runs exactly n_iter epochs without early stopping") {
  FitConfig cfg;
  cfg.n_iter = 17;
  cfg.patience = 0;
  cfg.batch_size = 4;
  const auto res = fit_loop(pull_objective, NetParams{{"p", Tensor::Zero(1, 1)}}, constant_dataset(20, 1.0),
                            make_key(1), cfg);
  CHECK(res.losses.train.size() == 17);
  CHECK(res.losses.val.size() == 17);
}

TEST_CASE("fit_loop stops after patience epochs without improvement") {
  // Training drives p upward by about lr per epoch; the validation target
  // sits at 3 lr, so validation improves through epoch 3 and then worsens.
  const double lr = 1e-3;
  FitConfig cfg;
  cfg.n_iter = 100;
  cfg.patience = 2;
  cfg.batch_size = 64;
  std::vector<double> p_after_epoch;
  const Objective obj = [&](const VarParams& params, const Dataset& batch, RngKey key) {
    if (batch.rows() == 1) p_after_epoch.push_back(param(params, "p").value()(0, 0));
    return pull_objective(params, batch, key);
  };
  const auto res = fit_loop(obj, NetParams{{"p", Tensor::Zero(1, 1)}}, constant_dataset(10, 100.0),
                            constant_dataset(1, 3 * lr), make_key(2), cfg);
  CHECK(res.losses.train.size() == 5);
  CHECK(res.losses.val.size() == 5);
  CHECK(res.best_epoch == 3);
  REQUIRE(p_after_epoch.size() == 5);
  CHECK(res.params.at("p")(0, 0) == p_after_epoch[2]);
  CHECK(res.params.at("p")(0, 0) == doctest::Approx(3 * lr).epsilon(1e-3));
}

TEST_CASE("fit_loop is deterministic and validates inputs") {
  MlpSpec spec{1, 1, {8}, Activation::tanh, {}};
  Dataset d;
  d.y = random_tensor(make_key(40), 200, 1);
  d.theta.add("theta", (d.y.array() * 2.0 + 0.3).matrix());
  const Objective obj = [&](const VarParams& p, const Dataset& b, RngKey) {
    return mean(square(mlp_forward(spec, p, "mlp", Var(b.y)) - Var(b.theta.at("theta"))));
  };
  FitConfig cfg;
  cfg.n_iter = 30;
  const auto a = fit_loop(obj, mlp_init(spec, make_key(1)), d, make_key(5), cfg);
  const auto b = fit_loop(obj, mlp_init(spec, make_key(1)), d, make_key(5), cfg);
  CHECK(a.params == b.params);
  CHECK(a.losses.val == b.losses.val);
  CHECK(a.losses.val.back() < a.losses.val.front());

  cfg.batch_size = 0;
  CHECK_THROWS_AS(fit_loop(obj, mlp_init(spec, make_key(1)), d, make_key(5), cfg), ContractError);
  cfg.batch_size = 8;
  Dataset empty;
  empty.y = Matrix(0, 1);
  CHECK_THROWS_AS(fit_loop(obj, mlp_init(spec, make_key(1)), empty, make_key(5), cfg), ContractError);

  const Objective bad = [](const VarParams& p, const Dataset&, RngKey) {
    return log(param(p, "mlp/linear_0/b") * 0.0 + Var(Tensor::Constant(1, 8, -1.0))) * 1.0;
  };
  const Objective nan_loss = [&](const VarParams& p, const Dataset& bt, RngKey k) {
    return sum(bad(p, bt, k));
  };
  CHECK_THROWS_AS(fit_loop(nan_loss, mlp_init(spec, make_key(1)), d, make_key(5), cfg), NumericError);
}

namespace {

// Jacobian sparsity of a masked MLP probed with one-hot perturbations:
// dep(i, j) is true when output coordinate i (any parameter block) moves
// when input j moves.
std::vector<std::vector<bool>> probe_dependence(int dim, const std::vector<int>& order, int context_dim,
                                                RngKey key, int n_params = 2) {
  const std::vector<int> hidden{7, 9};
  const auto masks = made_masks(dim, hidden, n_params, order, context_dim);
  MlpSpec spec{dim + context_dim, dim * n_params, hidden, Activation::tanh, {}};
  const auto params = randomize(mlp_init(spec, key), fold_in(key, 1), 1.0);
  const auto vp = as_constants(params);
  const Tensor x = random_tensor(fold_in(key, 2), 1, dim + context_dim);
  const Tensor base = mlp_forward(spec, vp, "mlp", Var(x), &masks).value();
  std::vector<std::vector<bool>> dep(static_cast<std::size_t>(dim),
                                     std::vector<bool>(static_cast<std::size_t>(dim + context_dim), false));
  for (int j = 0; j < dim + context_dim; ++j) {
    Tensor xp = x;
    xp(0, j) += 1e-3;
    const Tensor moved = mlp_forward(spec, vp, "mlp", Var(xp), &masks).value();
    for (int p = 0; p < n_params; ++p)
      for (int i = 0; i < dim; ++i)
        if (std::abs(moved(0, p * dim + i) - base(0, p * dim + i)) > 0.0)
          dep[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = true;
  }
  return dep;
}

}  // namespace

TEST_CASE("MADE with one coordinate depends only on context") {
  const auto dep = probe_dependence(1, {0}, 2, make_key(50));
  CHECK_FALSE(dep[0][0]);
  CHECK(dep[0][1]);
  CHECK(dep[0][2]);
}

TEST_CASE("MADE identity order gives a strictly lower-triangular Jacobian") {
  const auto dep = probe_dependence(3, {0, 1, 2}, 0, make_key(51));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      CAPTURE(i);
      CAPTURE(j);
      CHECK(dep[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] == (j < i));
    }
}

TEST_CASE("MADE reversed order flips the pattern") {
  const auto dep = probe_dependence(3, {2, 1, 0}, 0, make_key(52));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) CHECK(dep[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] == (j > i));
}

TEST_CASE("MADE autoregressive property for random orders") {
  for (int dim = 2; dim <= 5; ++dim)
    for (std::uint64_t trial = 0; trial < 3; ++trial) {
      const auto perm = permutation(make_key(60 + trial), dim);
      std::vector<int> order(perm.begin(), perm.end());
      const auto dep = probe_dependence(dim, order, 1, fold_in(make_key(61), static_cast<std::uint64_t>(dim) * 10 + trial));
      for (int i = 0; i < dim; ++i) {
        for (int j = 0; j < dim; ++j) {
          const bool allowed = order[static_cast<std::size_t>(j)] < order[static_cast<std::size_t>(i)];
          if (!allowed) CHECK_FALSE(dep[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]);
        }
        CHECK(dep[static_cast<std::size_t>(i)][static_cast<std::size_t>(dim)]);
      }
    }
  CHECK_THROWS_AS(made_masks(0, std::vector<int>{4}, 2, std::vector<int>{}), ContractError);
  CHECK_THROWS_AS(made_masks(2, std::vector<int>{4}, 2, std::vector<int>{0, 0}), ContractError);
}

TEST_CASE("parameter documents round-trip losslessly") {
  MlpSpec spec{3, 2, {5}, Activation::gelu, Activation::tanh};
  auto params = randomize(mlp_init(spec, make_key(70)), make_key(71), 1.0);
  params["mlp/linear_0/b"](0, 1) = 0.1 + 0.2;
  params["mlp/linear_0/b"](0, 2) = -0.0;
  nlohmann::json meta = spec;
  const auto doc = params_to_json(params, meta);
  const auto text = doc.dump();
  const auto [back, spec_back] = params_from_json(nlohmann::json::parse(text));
  CHECK(back == params);
  CHECK(std::signbit(back.at("mlp/linear_0/b")(0, 2)));
  CHECK(spec_back.get<MlpSpec>().hidden_sizes == spec.hidden_sizes);
  CHECK(*spec_back.get<MlpSpec>().final_activation == Activation::tanh);
  const double vals[3] = {1.5, -2.25, 1e-300};
  CHECK(decode_doubles(encode_doubles(vals, 3)) == std::vector<double>{1.5, -2.25, 1e-300});
  CHECK_THROWS_AS(params_from_json(nlohmann::json{{"layers", {{{"name", "x"}, {"shape", {2, 2}}, {"data", "AAAA"}}}}}),
                  ConfigError);
}

TEST_CASE("fit config JSON and loss profile CSV") {
  const auto cfg = nlohmann::json{{"batch_size", 64}, {"lr", 5e-4}}.get<nn::FitConfig>();
  CHECK(cfg.batch_size == 64);
  CHECK(cfg.adam.lr == 5e-4);
  CHECK(cfg.n_iter == 1000);
  CHECK(nlohmann::json(cfg).at("batch_size") == 64);
  const nlohmann::json bad{{"val_fraction", 1.0}};
  CHECK_THROWS_AS((void)bad.get<nn::FitConfig>(), ConfigError);
  std::ostringstream out;
  nn::write_loss_profile_csv(out, nn::LossProfile{{1.5, 0.25}, {2.0, 0.5}});
  CHECK(out.str() == "epoch,train,val\n1,1.5,2\n2,0.25,0.5\n");
}
