#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbi/core/rng.hpp"
#include "sbi/ndnet/autodiff.hpp"

namespace sbi::nn {

enum class Activation { identity, tanh, relu, gelu };

std::string to_string(Activation a);
/// Throws ConfigError for unknown names.
Activation activation_from_string(const std::string& name);

Var apply(Activation a, const Var& x);

struct MlpSpec {
  int in_dim = 1;
  int out_dim = 1;
  std::vector<int> hidden_sizes;
  Activation activation = Activation::tanh;
  std::optional<Activation> final_activation;

  /// Throws ConfigError if any width is < 1.
  void validate() const;
  [[nodiscard]] int n_linear() const noexcept { return static_cast<int>(hidden_sizes.size()) + 1; }
  /// (fan_in, fan_out) of linear layer i.
  [[nodiscard]] std::pair<int, int> layer_shape(int i) const;
};

void to_json(nlohmann::json& j, const MlpSpec& s);
void from_json(const nlohmann::json& j, MlpSpec& s);

/// Weight initialization. `fixed` draws N(0, std^2) truncated at two
/// standard deviations; `fan_in` uses std = 1/sqrt(fan_in), rescaled to
/// undo the variance lost by truncation.
struct Init {
  enum class Kind { fixed, fan_in } kind = Kind::fan_in;
  double std = 1e-3;

  static Init fixed(double s) { return Init{Kind::fixed, s}; }
  static Init fan_in() { return Init{Kind::fan_in, 0.0}; }
};

/// Adds "<prefix>/linear_<i>/w" (fan_in x fan_out) and ".../b" (1 x fan_out),
/// biases zero.
void mlp_init(const MlpSpec& spec, RngKey key, const std::string& prefix, NetParams& params, Init init = Init::fan_in());
NetParams mlp_init(const MlpSpec& spec, RngKey key, const std::string& prefix = "mlp", Init init = Init::fan_in());

/// Affine-activation stack. `masks`, if given, holds one 0/1 matrix per
/// linear layer multiplied into its weights.
Var mlp_forward(const MlpSpec& spec, const VarParams& params, const std::string& prefix, const Var& x,
                const std::vector<Tensor>* masks = nullptr);
Tensor mlp_forward(const MlpSpec& spec, const NetParams& params, const Tensor& x, const std::string& prefix = "mlp");

/// Truncated normal draws used by the initializers.
Tensor truncated_normal(Generator& gen, Eigen::Index rows, Eigen::Index cols, double std);

}  // namespace sbi::nn
