#pragma once

#include <variant>

#include "sbi/flows/maf.hpp"
#include "sbi/flows/mdn.hpp"

namespace sbi::flows {

/// Conditional density estimator used by the likelihood and posterior engines.
using DensitySpec = std::variant<MafSpec, MdnSpec>;

int event_dim(const DensitySpec& spec);
int context_dim(const DensitySpec& spec);

NetParams density_init(const DensitySpec& spec, RngKey key);
Var density_log_prob(const DensitySpec& spec, const VarParams& params, const Var& x, const Var& context);
Vector density_log_prob(const DensitySpec& spec, const NetParams& params, const Tensor& x, const Tensor& context);
Tensor density_sample(const DensitySpec& spec, const NetParams& params, RngKey key, const Tensor& context,
                      Eigen::Index n);

/// {"kind": "maf" | "mdn", ...fields}.
nlohmann::json density_to_json(const DensitySpec& spec);
DensitySpec density_from_json(const nlohmann::json& j);

}  // namespace sbi::flows
