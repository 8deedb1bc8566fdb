#include "sbi/flows/mdn.hpp"

#include <cmath>
#include <numbers>

#include "sbi/core/errors.hpp"
#include "sbi/flows/maf.hpp"

namespace sbi::flows {

void MdnSpec::validate() const {
  if (event_dim < 1 || context_dim < 1) throw ConfigError("MdnSpec: event_dim and context_dim must be >= 1");
  if (n_components < 1) throw ConfigError("MdnSpec: n_components must be >= 1");
  for (int h : hidden_sizes)
    if (h < 1) throw ConfigError("MdnSpec: hidden sizes must be >= 1");
}

nn::MlpSpec MdnSpec::net_spec() const {
  return nn::MlpSpec{context_dim, n_components * (1 + 2 * event_dim), hidden_sizes, activation, {}};
}

void to_json(nlohmann::json& j, const MdnSpec& s) {
  j = nlohmann::json{{"event_dim", s.event_dim},
                     {"context_dim", s.context_dim},
                     {"n_components", s.n_components},
                     {"hidden_sizes", s.hidden_sizes},
                     {"activation", nn::to_string(s.activation)}};
}

void from_json(const nlohmann::json& j, MdnSpec& s) {
  s.event_dim = j.at("event_dim").get<int>();
  s.context_dim = j.at("context_dim").get<int>();
  s.n_components = j.value("n_components", 10);
  s.hidden_sizes = j.value("hidden_sizes", std::vector<int>{64, 64});
  s.activation = nn::activation_from_string(j.value("activation", std::string("tanh")));
  s.validate();
}

NetParams mdn_init(const MdnSpec& spec, RngKey key, const std::string& prefix) {
  spec.validate();
  return nn::mlp_init(spec.net_spec(), key, prefix);
}

MdnHeads mdn_heads(const MdnSpec& spec, const VarParams& params, const Var& context, const std::string& prefix) {
  if (context.cols() != spec.context_dim) throw ContractError("MDN: context has the wrong width");
  const Var out = nn::mlp_forward(spec.net_spec(), params, prefix, context);
  if (!out.value().allFinite()) throw NumericError("MDN: non-finite network output");
  const int k = spec.n_components;
  const int kd = k * spec.event_dim;
  const Var logits = nn::slice_cols(out, 0, k);
  const Var lse = nn::logsumexp_rows(logits);
  const Var log_w = nn::add_col(logits, -lse);
  return {log_w, nn::slice_cols(out, k, kd),
          nn::clamp(nn::slice_cols(out, k + kd, kd), -kMaxLogScale, kMaxLogScale)};
}

Var mdn_log_prob(const MdnSpec& spec, const VarParams& params, const Var& x, const Var& context,
                 const std::string& prefix) {
  if (x.cols() != spec.event_dim) throw ContractError("MDN: event has the wrong width");
  if (x.rows() != context.rows()) throw ContractError("MDN: event and context row counts differ");
  const auto h = mdn_heads(spec, params, context, prefix);
  const int k = spec.n_components;
  const int d = spec.event_dim;
  std::vector<Var> tiles(static_cast<std::size_t>(k), x);
  const Var xt = nn::concat_cols(tiles);
  const Var z = (xt - h.means) * nn::exp(-h.log_scales);
  const Var per_coord = nn::square(z) * -0.5 - h.log_scales;  // n x K*D
  std::vector<Var> comps;
  comps.reserve(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) comps.push_back(nn::row_sum(nn::slice_cols(per_coord, c * d, d)));
  const double norm = -0.5 * d * std::log(2.0 * std::numbers::pi);
  return nn::logsumexp_rows(h.log_weights + nn::concat_cols(comps)) + norm;
}

Vector mdn_log_prob(const MdnSpec& spec, const NetParams& params, const Tensor& x, const Tensor& context) {
  return mdn_log_prob(spec, nn::as_constants(params), Var(x), Var(context)).value().col(0);
}

Tensor mdn_sample(const MdnSpec& spec, const NetParams& params, RngKey key, const Tensor& context, Eigen::Index n) {
  if (n < 1) throw ContractError("mdn_sample: n must be >= 1");
  const Tensor ctx = broadcast_context(context, n, spec.context_dim);
  const auto h = mdn_heads(spec, nn::as_constants(params), Var(ctx));
  const Tensor w = h.log_weights.value().array().exp().matrix();
  const int d = spec.event_dim;
  Generator gen(key);
  Tensor out(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double u = gen.uniform();
    int comp = spec.n_components - 1;
    double acc = 0.0;
    for (int c = 0; c < spec.n_components; ++c) {
      acc += w(i, c);
      if (u < acc) {
        comp = c;
        break;
      }
    }
    for (int j = 0; j < d; ++j) {
      const double mu = h.means.value()(i, comp * d + j);
      const double sd = std::exp(h.log_scales.value()(i, comp * d + j));
      out(i, j) = mu + sd * gen.normal();
    }
  }
  return out;
}

}  // namespace sbi::flows
