#include "sbi/flows/maf.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "sbi/core/errors.hpp"
#include "sbi/ndnet/made.hpp"

namespace sbi::flows {

namespace {

std::string layer_prefix(const std::string& prefix, int l) { return prefix + "/layer_" + std::to_string(l); }

std::vector<int> identity_order(int n) {
  std::vector<int> o(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) o[static_cast<std::size_t>(i)] = i;
  return o;
}

std::vector<int> inverse_perm(const std::vector<int>& p) {
  std::vector<int> inv(p.size());
  for (std::size_t j = 0; j < p.size(); ++j) inv[static_cast<std::size_t>(p[j])] = static_cast<int>(j);
  return inv;
}

struct Conditioner {
  nn::MlpSpec spec;
  std::vector<Tensor> masks;
};

Conditioner make_conditioner(const MafSpec& s) {
  const auto order = identity_order(s.event_dim);
  return {s.conditioner_spec(), nn::made_masks(s.event_dim, s.hidden_sizes, 2, order, s.context_dim)};
}

// (mean, log_scale) for layer l evaluated at v (layer output coordinates).
std::pair<Var, Var> condition(const MafSpec& s, const Conditioner& c, const VarParams& params,
                              const std::string& prefix, int l, const Var& v, const Var& context) {
  const Var in = s.context_dim > 0 ? nn::concat_cols({v, context}) : v;
  const Var out = nn::mlp_forward(c.spec, params, layer_prefix(prefix, l), in, &c.masks);
  if (!out.value().allFinite())
    throw NumericError("MAF layer " + std::to_string(l) + ": non-finite conditioner output");
  const Var mu = nn::slice_cols(out, 0, s.event_dim);
  const Var ls = nn::clamp(nn::slice_cols(out, s.event_dim, s.event_dim), -kMaxLogScale, kMaxLogScale);
  return {mu, ls};
}

void check_inputs(const MafSpec& s, const Tensor& x, const Tensor& ctx) {
  if (x.cols() != s.event_dim)
    throw ContractError("MAF: input has " + std::to_string(x.cols()) + " columns, expected " +
                        std::to_string(s.event_dim));
  if (ctx.cols() != s.context_dim || (s.context_dim > 0 && ctx.rows() != x.rows()))
    throw ContractError("MAF: context must be " + std::to_string(x.rows()) + " x " + std::to_string(s.context_dim));
}

}  // namespace

void MafSpec::validate() const {
  if (event_dim < 1) throw ConfigError("MafSpec: event_dim must be >= 1");
  if (context_dim < 0) throw ConfigError("MafSpec: context_dim must be >= 0");
  if (n_layers < 1) throw ConfigError("MafSpec: n_layers must be >= 1");
  if (hidden_sizes.empty()) throw ConfigError("MafSpec: at least one hidden layer is required");
  for (int h : hidden_sizes)
    if (h < 1) throw ConfigError("MafSpec: hidden sizes must be >= 1");
  if (!permutations.empty()) {
    if (static_cast<int>(permutations.size()) != n_layers)
      throw ConfigError("MafSpec: need one permutation per layer");
    for (const auto& p : permutations) {
      auto sorted = p;
      std::sort(sorted.begin(), sorted.end());
      if (sorted != identity_order(event_dim)) throw ConfigError("MafSpec: invalid permutation");
    }
  }
}

std::vector<int> MafSpec::permutation(int layer) const {
  if (!permutations.empty()) return permutations[static_cast<std::size_t>(layer)];
  auto p = identity_order(event_dim);
  std::reverse(p.begin(), p.end());
  return p;
}

nn::MlpSpec MafSpec::conditioner_spec() const {
  return nn::MlpSpec{event_dim + context_dim, 2 * event_dim, hidden_sizes, activation, {}};
}

void to_json(nlohmann::json& j, const MafSpec& s) {
  j = nlohmann::json{{"event_dim", s.event_dim},       {"context_dim", s.context_dim},
                     {"n_layers", s.n_layers},         {"hidden_sizes", s.hidden_sizes},
                     {"activation", nn::to_string(s.activation)}, {"permutations", s.permutations}};
}

void from_json(const nlohmann::json& j, MafSpec& s) {
  s.event_dim = j.at("event_dim").get<int>();
  s.context_dim = j.value("context_dim", 0);
  s.n_layers = j.value("n_layers", 5);
  s.hidden_sizes = j.value("hidden_sizes", std::vector<int>{64, 64});
  s.activation = nn::activation_from_string(j.value("activation", std::string("tanh")));
  s.permutations = j.value("permutations", std::vector<std::vector<int>>{});
  s.validate();
}

NetParams maf_init(const MafSpec& spec, RngKey key, const std::string& prefix) {
  spec.validate();
  NetParams params;
  const auto cspec = spec.conditioner_spec();
  for (int l = 0; l < spec.n_layers; ++l)
    nn::mlp_init(cspec, fold_in(key, static_cast<std::uint64_t>(l)), layer_prefix(prefix, l), params,
                 nn::Init::fixed(1e-3));
  return params;
}

Var std_normal_log_prob(const Var& z) {
  const double c = -0.5 * static_cast<double>(z.cols()) * std::log(2.0 * std::numbers::pi);
  return nn::row_sum(nn::square(z)) * -0.5 + c;
}

std::pair<Var, Var> maf_inverse(const MafSpec& spec, const VarParams& params, const Var& x, const Var& context,
                                const std::string& prefix) {
  check_inputs(spec, x.value(), context.value());
  const auto cond = make_conditioner(spec);
  Var cur = x;
  Var log_det(Tensor::Zero(x.rows(), 1));
  for (int l = spec.n_layers - 1; l >= 0; --l) {
    const auto [mu, ls] = condition(spec, cond, params, prefix, l, cur, context);
    const Var w = (cur - mu) * nn::exp(-ls);
    log_det = log_det - nn::row_sum(ls);
    cur = nn::permute_cols(w, inverse_perm(spec.permutation(l)));
  }
  return {cur, log_det};
}

std::pair<Tensor, Vector> maf_inverse(const MafSpec& spec, const NetParams& params, const Tensor& x,
                                      const Tensor& context) {
  const auto [z, ld] = maf_inverse(spec, nn::as_constants(params), Var(x), Var(context));
  return {z.value(), ld.value().col(0)};
}

Tensor maf_forward(const MafSpec& spec, const NetParams& params, const Tensor& z, const Tensor& context,
                   const std::string& prefix) {
  check_inputs(spec, z, context);
  const auto cond = make_conditioner(spec);
  const auto vp = nn::as_constants(params);
  const Var ctx(context);
  Tensor cur = z;
  for (int l = 0; l < spec.n_layers; ++l) {
    const auto perm = spec.permutation(l);
    Tensor w(cur.rows(), cur.cols());
    for (std::size_t j = 0; j < perm.size(); ++j) w.col(static_cast<Eigen::Index>(j)) = cur.col(perm[j]);
    // Coordinate i of the output only needs outputs < i, so after pass i the
    // first i+1 coordinates are final.
    Tensor v = Tensor::Zero(cur.rows(), cur.cols());
    for (int i = 0; i < spec.event_dim; ++i) {
      const auto [mu, ls] = condition(spec, cond, vp, prefix, l, Var(v), ctx);
      v.col(i) = w.col(i).cwiseProduct(ls.value().col(i).array().exp().matrix()) + mu.value().col(i);
    }
    cur = std::move(v);
  }
  return cur;
}

Var maf_log_prob(const MafSpec& spec, const VarParams& params, const Var& x, const Var& context,
                 const std::string& prefix) {
  const auto [z, ld] = maf_inverse(spec, params, x, context, prefix);
  return std_normal_log_prob(z) + ld;
}

Vector maf_log_prob(const MafSpec& spec, const NetParams& params, const Tensor& x, const Tensor& context) {
  return maf_log_prob(spec, nn::as_constants(params), Var(x), Var(context)).value().col(0);
}

Tensor broadcast_context(const Tensor& context, Eigen::Index n, int context_dim) {
  if (context_dim == 0) return Tensor(n, 0);
  if (context.cols() != context_dim) throw ContractError("context has the wrong width");
  if (context.rows() == n) return context;
  if (context.rows() != 1) throw ContractError("context must have 1 or n rows");
  return context.replicate(n, 1);
}

Tensor maf_sample(const MafSpec& spec, const NetParams& params, RngKey key, const Tensor& context, Eigen::Index n) {
  if (n < 1) throw ContractError("maf_sample: n must be >= 1");
  Generator gen(key);
  Tensor z(n, spec.event_dim);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = gen.normal();
  return maf_forward(spec, params, z, broadcast_context(context, n, spec.context_dim));
}

}  // namespace sbi::flows
