#include "sbi/ndnet/mlp.hpp"

#include <cmath>

#include "sbi/core/errors.hpp"

namespace sbi::nn {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::gelu: return "gelu";
  }
  return "identity";
}

Activation activation_from_string(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "gelu") return Activation::gelu;
  throw ConfigError("unknown activation '" + name + "' (expected tanh, relu, gelu or identity)");
}

Var apply(Activation a, const Var& x) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::tanh: return tanh(x);
    case Activation::relu: return relu(x);
    case Activation::gelu: return gelu(x);
  }
  return x;
}

void MlpSpec::validate() const {
  if (in_dim < 1 || out_dim < 1) throw ConfigError("MlpSpec: in_dim and out_dim must be >= 1");
  for (int h : hidden_sizes)
    if (h < 1) throw ConfigError("MlpSpec: hidden sizes must be >= 1");
}

std::pair<int, int> MlpSpec::layer_shape(int i) const {
  const int n_hidden = static_cast<int>(hidden_sizes.size());
  const int fan_in = i == 0 ? in_dim : hidden_sizes[static_cast<std::size_t>(i - 1)];
  const int fan_out = i == n_hidden ? out_dim : hidden_sizes[static_cast<std::size_t>(i)];
  return {fan_in, fan_out};
}

void to_json(nlohmann::json& j, const MlpSpec& s) {
  j = nlohmann::json{{"in_dim", s.in_dim},
                     {"out_dim", s.out_dim},
                     {"hidden_sizes", s.hidden_sizes},
                     {"activation", to_string(s.activation)}};
  if (s.final_activation) j["final_activation"] = to_string(*s.final_activation);
}

void from_json(const nlohmann::json& j, MlpSpec& s) {
  s.in_dim = j.at("in_dim").get<int>();
  s.out_dim = j.at("out_dim").get<int>();
  s.hidden_sizes = j.at("hidden_sizes").get<std::vector<int>>();
  s.activation = activation_from_string(j.at("activation").get<std::string>());
  if (j.contains("final_activation"))
    s.final_activation = activation_from_string(j.at("final_activation").get<std::string>());
  s.validate();
}

Tensor truncated_normal(Generator& gen, Eigen::Index rows, Eigen::Index cols, double std) {
  Tensor t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    double z = gen.normal();
    while (std::abs(z) > 2.0) z = gen.normal();
    t.data()[i] = z * std;
  }
  return t;
}

void mlp_init(const MlpSpec& spec, RngKey key, const std::string& prefix, NetParams& params, Init init) {
  spec.validate();
  // Standard deviation of N(0,1) truncated to [-2, 2].
  constexpr double kTruncStd = 0.87962566103423978;
  for (int i = 0; i < spec.n_linear(); ++i) {
    const auto [fan_in, fan_out] = spec.layer_shape(i);
    const double std =
        init.kind == Init::Kind::fixed ? init.std : 1.0 / std::sqrt(static_cast<double>(fan_in)) / kTruncStd;
    Generator gen(fold_in(key, static_cast<std::uint64_t>(i)));
    const std::string base = prefix + "/linear_" + std::to_string(i);
    params[base + "/w"] = truncated_normal(gen, fan_in, fan_out, std);
    params[base + "/b"] = Tensor::Zero(1, fan_out);
  }
}

NetParams mlp_init(const MlpSpec& spec, RngKey key, const std::string& prefix, Init init) {
  NetParams params;
  mlp_init(spec, key, prefix, params, init);
  return params;
}

Var mlp_forward(const MlpSpec& spec, const VarParams& params, const std::string& prefix, const Var& x,
                const std::vector<Tensor>* masks) {
  if (x.cols() != spec.in_dim)
    throw ContractError("mlp_forward: input has " + std::to_string(x.cols()) + " columns, expected " +
                        std::to_string(spec.in_dim));
  if (masks && static_cast<int>(masks->size()) != spec.n_linear())
    throw ContractError("mlp_forward: one mask per linear layer required");
  Var h = x;
  const int last = spec.n_linear() - 1;
  for (int i = 0; i <= last; ++i) {
    const std::string base = prefix + "/linear_" + std::to_string(i);
    Var w = param(params, base + "/w");
    const auto [fan_in, fan_out] = spec.layer_shape(i);
    if (w.rows() != fan_in || w.cols() != fan_out) throw ContractError("mlp_forward: weight '" + base + "' has wrong shape");
    if (masks) w = w * Var((*masks)[static_cast<std::size_t>(i)]);
    h = add_row(matmul(h, w), param(params, base + "/b"));
    if (i < last)
      h = apply(spec.activation, h);
    else if (spec.final_activation)
      h = apply(*spec.final_activation, h);
  }
  return h;
}

Tensor mlp_forward(const MlpSpec& spec, const NetParams& params, const Tensor& x, const std::string& prefix) {
  return mlp_forward(spec, as_constants(params), prefix, Var(x)).value();
}

}  // namespace sbi::nn
