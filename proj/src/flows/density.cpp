#include "sbi/flows/density.hpp"

#include "sbi/core/errors.hpp"

namespace sbi::flows {

int event_dim(const DensitySpec& spec) {
  return std::visit([](const auto& s) { return s.event_dim; }, spec);
}

int context_dim(const DensitySpec& spec) {
  return std::visit([](const auto& s) { return s.context_dim; }, spec);
}

NetParams density_init(const DensitySpec& spec, RngKey key) {
  if (const auto* maf = std::get_if<MafSpec>(&spec)) return maf_init(*maf, key);
  return mdn_init(std::get<MdnSpec>(spec), key);
}

Var density_log_prob(const DensitySpec& spec, const VarParams& params, const Var& x, const Var& context) {
  if (const auto* maf = std::get_if<MafSpec>(&spec)) return maf_log_prob(*maf, params, x, context);
  return mdn_log_prob(std::get<MdnSpec>(spec), params, x, context);
}

Vector density_log_prob(const DensitySpec& spec, const NetParams& params, const Tensor& x, const Tensor& context) {
  return density_log_prob(spec, nn::as_constants(params), Var(x), Var(context)).value().col(0);
}

Tensor density_sample(const DensitySpec& spec, const NetParams& params, RngKey key, const Tensor& context,
                      Eigen::Index n) {
  if (const auto* maf = std::get_if<MafSpec>(&spec)) return maf_sample(*maf, params, key, context, n);
  return mdn_sample(std::get<MdnSpec>(spec), params, key, context, n);
}

nlohmann::json density_to_json(const DensitySpec& spec) {
  nlohmann::json j;
  if (const auto* maf = std::get_if<MafSpec>(&spec)) {
    j = *maf;
    j["kind"] = "maf";
  } else {
    j = std::get<MdnSpec>(spec);
    j["kind"] = "mdn";
  }
  return j;
}

DensitySpec density_from_json(const nlohmann::json& j) {
  try {
    const auto kind = j.value("kind", std::string("maf"));
    if (kind == "maf") return j.get<MafSpec>();
    if (kind == "mdn") return j.get<MdnSpec>();
    throw ConfigError("unknown density estimator '" + kind + "' (expected maf or mdn)");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed density estimator config: ") + e.what());
  }
}

}  // namespace sbi::flows
