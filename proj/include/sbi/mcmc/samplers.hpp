#pragma once

#include <functional>
#include <optional>

#include <nlohmann/json.hpp>

#include "sbi/core/rng.hpp"
#include "sbi/core/types.hpp"
#include "sbi/mcmc/chains.hpp"

namespace sbi::mcmc {

using LogDensity = std::function<double(const Vector&)>;
using Gradient = std::function<Vector(const Vector&)>;

enum class SamplerKind { rmh, mala, slice };

std::string to_string(SamplerKind k);
SamplerKind sampler_kind_from_string(const std::string& name);

struct SamplerConfig {
  SamplerKind kind = SamplerKind::slice;
  int n_chains = 4;
  int n_warmup = 500;
  int n_draws = 1000;
  /// Random-walk proposal standard deviation.
  double rmh_step = 0.5;
  /// Langevin step size; unset means 0.1 / sqrt(dim).
  std::optional<double> mala_step;
  double slice_width = 1.0;
  /// Maximum number of width steps taken when stepping out.
  int slice_max_steps = 10;

  void validate() const;
};

void to_json(nlohmann::json& j, const SamplerConfig& c);
void from_json(const nlohmann::json& j, SamplerConfig& c);

/// Central differences with step h in every coordinate.
Vector numerical_gradient(const LogDensity& f, const Vector& x, double h = 1e-5);

/// Runs cfg.n_chains chains from the rows of `init` (one row per chain, or a
/// single row shared by all). Chain c draws from fold_in(key, c), so its
/// draws do not depend on the other chains. Warmup draws are discarded.
/// `grad` is used by MALA; numerical gradients are taken when it is empty.
ChainSet sample(const SamplerConfig& cfg, const LogDensity& log_density, const Matrix& init, RngKey key,
                const ParamLayout& layout, const Gradient& grad = {});

/// One chain of length n_warmup + n_draws, warmup included.
Matrix run_chain(const SamplerConfig& cfg, const LogDensity& log_density, const Vector& init, RngKey key,
                 const Gradient& grad = {});

}  // namespace sbi::mcmc
