#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbi/mcmc/chains.hpp"

namespace sbi::cli {

/// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumeric = 3;

/// Parses `args` (without the program name) and runs one subcommand:
/// simulate, fit, sample, run or plotdata. Errors are reported on `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Experiment document for `run` with every default filled in:
///   model, model_options, method (nle|npe|fmpe|nre|smc_abc|rejection_abc),
///   seed, observable, n_rounds, n_per_round, warm_start, n_samples,
///   estimator, fit, sampler, abc.
/// Missing keys take defaults; unknown keys (top level and abc) throw ConfigError.
nlohmann::json resolve_experiment(const nlohmann::json& config);

/// Runs a resolved experiment and writes its artifacts into `out_dir`.
void run_experiment(const nlohmann::json& resolved, const std::string& out_dir);

/// Observable from an inline comma-separated list or a file of numbers
/// (commas, whitespace or newlines).
std::vector<double> parse_observable(const std::string& text_or_path);

/// Tidy plot tables from posterior draws. `kind` is one of marginal-hist,
/// pair-grid, rank, ess-evolution, rhat-ress.
void write_plot_data(const mcmc::ChainSet& chains, const std::string& kind, std::ostream& out, int n_bins = 20);

}  // namespace sbi::cli
