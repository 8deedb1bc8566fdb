#pragma once

#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbi/core/rng.hpp"
#include "sbi/ndnet/autodiff.hpp"
#include "sbi/ndnet/mlp.hpp"

namespace sbi::flows {

using nn::NetParams;
using nn::Tensor;
using nn::Var;
using nn::VarParams;

/// Affine masked autoregressive flow over `event_dim` coordinates, optionally
/// conditioned on a context vector. Layer l reorders its input by
/// permutations[l] and applies v_i = w_i * exp(s_i) + m_i, where (m_i, s_i)
/// come from a MADE conditioner that sees v_{<i} and the context.
struct MafSpec {
  int event_dim = 1;
  int context_dim = 0;
  int n_layers = 5;
  std::vector<int> hidden_sizes{64, 64};
  nn::Activation activation = nn::Activation::tanh;
  /// One permutation per layer; empty means order reversal for every layer.
  std::vector<std::vector<int>> permutations;

  /// Throws ConfigError on invalid sizes or permutations.
  void validate() const;
  [[nodiscard]] std::vector<int> permutation(int layer) const;
  [[nodiscard]] nn::MlpSpec conditioner_spec() const;
};

void to_json(nlohmann::json& j, const MafSpec& s);
void from_json(const nlohmann::json& j, MafSpec& s);

/// Conditioner weights drawn from a truncated normal with std 0.001 and zero
/// biases, so a fresh flow is close to a pure permutation.
NetParams maf_init(const MafSpec& spec, RngKey key, const std::string& prefix = "maf");

/// log_scale is clamped to this range before exponentiation.
inline constexpr double kMaxLogScale = 7.0;

/// Density direction (data -> base). Returns (z, log_det) with log_det of
/// shape n x 1.
std::pair<Var, Var> maf_inverse(const MafSpec& spec, const VarParams& params, const Var& x, const Var& context,
                                const std::string& prefix = "maf");
std::pair<Tensor, Vector> maf_inverse(const MafSpec& spec, const NetParams& params, const Tensor& x,
                                      const Tensor& context);

/// Sampling direction (base -> data); each layer solves coordinate by
/// coordinate.
Tensor maf_forward(const MafSpec& spec, const NetParams& params, const Tensor& z, const Tensor& context,
                   const std::string& prefix = "maf");

/// Differentiable log density, n x 1.
Var maf_log_prob(const MafSpec& spec, const VarParams& params, const Var& x, const Var& context,
                 const std::string& prefix = "maf");
Vector maf_log_prob(const MafSpec& spec, const NetParams& params, const Tensor& x, const Tensor& context);

/// `n` draws. A single-row context is shared by every draw; otherwise the
/// context must have n rows.
Tensor maf_sample(const MafSpec& spec, const NetParams& params, RngKey key, const Tensor& context, Eigen::Index n);

/// Standard-normal log density per row, n x 1.
Var std_normal_log_prob(const Var& z);

/// Repeats a single-row context n times; checks shapes otherwise.
Tensor broadcast_context(const Tensor& context, Eigen::Index n, int context_dim);

}  // namespace sbi::flows
