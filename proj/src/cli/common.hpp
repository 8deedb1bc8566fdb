#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "sbi/engines/engines.hpp"
#include "sbi/models/models.hpp"
#include "sbi/ndnet/optim.hpp"

namespace sbi::cli::detail {

/// Simulator that checks the model's output shape.
Simulator model_simulator(const models::BenchmarkModel& m);

/// Default estimator for (kind, dims) with `patch` merged over its JSON.
engines::EstimatorSpec resolve_estimator(engines::EngineKind kind, int theta_dim, int y_dim, const nlohmann::json& patch);

/// Builds an engine from {"estimator": patch, "sampler": {...}} sections.
engines::Engine build_engine(engines::EngineKind kind, const models::BenchmarkModel& m, const nlohmann::json& cfg,
                             RngKey probe_key);

nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);

/// Header "round,epoch,train,val".
void write_round_losses_csv(const std::string& path, const std::vector<nn::LossProfile>& rounds);

}  // namespace sbi::cli::detail
