#pragma once

#include <nlohmann/json.hpp>

#include "sbi/core/rng.hpp"
#include "sbi/ndnet/autodiff.hpp"
#include "sbi/ndnet/mlp.hpp"

namespace sbi::flows {

using nn::NetParams;
using nn::Tensor;
using nn::Var;
using nn::VarParams;

/// Mixture of K diagonal Gaussians whose parameters are produced by an MLP of
/// the context. Network output columns: [logits (K) | means (K*D) |
/// log_scales (K*D)], component-major within each block (k*D + d).
struct MdnSpec {
  int event_dim = 1;
  int context_dim = 1;
  int n_components = 10;
  std::vector<int> hidden_sizes{64, 64};
  nn::Activation activation = nn::Activation::tanh;

  void validate() const;
  [[nodiscard]] nn::MlpSpec net_spec() const;
};

void to_json(nlohmann::json& j, const MdnSpec& s);
void from_json(const nlohmann::json& j, MdnSpec& s);

NetParams mdn_init(const MdnSpec& spec, RngKey key, const std::string& prefix = "mdn");

struct MdnHeads {
  Var log_weights;  // n x K, log-softmax of the logits
  Var means;        // n x K*D
  Var log_scales;   // n x K*D, clamped to [-7, 7]
};

MdnHeads mdn_heads(const MdnSpec& spec, const VarParams& params, const Var& context, const std::string& prefix = "mdn");

/// Differentiable log density, n x 1.
Var mdn_log_prob(const MdnSpec& spec, const VarParams& params, const Var& x, const Var& context,
                 const std::string& prefix = "mdn");
Vector mdn_log_prob(const MdnSpec& spec, const NetParams& params, const Tensor& x, const Tensor& context);

/// Draws a component per row from the mixture weights, then a Gaussian draw.
Tensor mdn_sample(const MdnSpec& spec, const NetParams& params, RngKey key, const Tensor& context, Eigen::Index n);

}  // namespace sbi::flows
