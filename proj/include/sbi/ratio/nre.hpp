#pragma once

#include <nlohmann/json.hpp>

#include "sbi/core/dataset.hpp"
#include "sbi/core/rng.hpp"
#include "sbi/ndnet/autodiff.hpp"
#include "sbi/ndnet/mlp.hpp"

namespace sbi::ratio {

using nn::NetParams;
using nn::Tensor;
using nn::Var;
using nn::VarParams;

/// Contrastive ratio estimator: a classifier h(y, theta) = exp(mlp([y, theta]))
/// decides which of C candidate parameter sets, if any, produced y.
struct NreSpec {
  int theta_dim = 1;
  int y_dim = 1;
  std::vector<int> hidden_sizes{64, 64};
  nn::Activation activation = nn::Activation::tanh;
  int n_contrast = 5;
  double gamma = 1.0;

  void validate() const;
  [[nodiscard]] nn::MlpSpec net_spec() const;
};

void to_json(nlohmann::json& j, const NreSpec& s);
void from_json(const nlohmann::json& j, NreSpec& s);

NetParams nre_init(const NreSpec& spec, RngKey key, const std::string& prefix = "nre");

/// log h(y, theta) per row, n x 1.
Var log_h(const NreSpec& spec, const VarParams& params, const Var& y, const Var& theta,
          const std::string& prefix = "nre");
Vector log_h(const NreSpec& spec, const NetParams& params, const Tensor& y, const Tensor& theta);

/// Row-wise class log-probabilities from log h values (n x C):
/// column 0 is log C - log(C + gamma sum h), column c is
/// log(gamma h_c) - log(C + gamma sum h).
Var class_log_probs_from_log(const Var& log_h_values, double gamma);
/// Same from h values, which must be positive.
Tensor class_log_probs(const Tensor& h_values, double gamma, int n_contrast);

/// Cross-entropy of the C-way contrastive classifier over a batch. Rows are
/// shuffled by `key`; contrast sets are cyclic shifts of the shuffled batch.
Var nre_loss(const NreSpec& spec, const VarParams& params, const Dataset& batch, RngKey key,
             const std::string& prefix = "nre");

/// Estimated log likelihood-to-evidence ratio, i.e. log h.
Vector log_ratio(const NreSpec& spec, const NetParams& params, const Tensor& y, const Tensor& theta);

}  // namespace sbi::ratio
