#include "sbi/cli/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>

#include <CLI11.hpp>

#include "common.hpp"
#include "sbi/core/errors.hpp"
#include "sbi/ndnet/params_io.hpp"

namespace sbi::cli {

namespace {

struct SimulateOpts {
  std::string model;
  std::string model_options = "{}";
  long n = 0;
  std::uint64_t seed = 0;
  std::string out;
};

struct FitOpts {
  std::string engine;
  std::string model;
  std::string model_options;
  std::string data;
  std::string config;
  std::uint64_t seed = 0;
  std::string out_params;
  std::string out_losses;
};

struct SampleOpts {
  std::string params;
  std::string engine;
  std::string observable;
  long n = 1000;
  int chains = 0;
  std::uint64_t seed = 0;
  std::string out;
  std::string meta_out;
};

struct RunOpts {
  std::string config;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

struct PlotOpts {
  std::string posterior;
  std::string kind;
  std::string out;
  int bins = 20;
};

nlohmann::json parse_inline_json(const std::string& text, const char* what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("cannot parse ") + what + ": " + e.what());
  }
}

void cmd_simulate(const SimulateOpts& o, std::ostream& out) {
  if (o.n < 1) throw ConfigError("--n must be >= 1");
  const auto model = models::model_by_name(o.model, parse_inline_json(o.model_options, "--model-options"));
  const RngKey key = make_key(o.seed);
  Dataset d;
  d.theta = prior_sample(model.prior, fold_in(key, 0), o.n);
  d.y = model.simulate(fold_in(key, 1), d.theta);
  write_dataset_csv(o.out, d);
  out << "wrote " << d.rows() << " simulations to " << o.out << '\n';
}

void cmd_fit(const FitOpts& o, std::ostream& out) {
  nlohmann::json cfg = o.config.empty() ? nlohmann::json::object() : detail::read_json_file(o.config);
  if (!cfg.is_object()) throw ConfigError("fit config must be a JSON object");
  for (const auto& [k, _] : cfg.items())
    if (k != "fit" && k != "estimator" && k != "sampler" && k != "model_options")
      throw ConfigError("unknown fit config key '" + k + "'");
  const nlohmann::json model_options =
      !o.model_options.empty() ? parse_inline_json(o.model_options, "--model-options")
                               : cfg.value("model_options", nlohmann::json::object());
  const auto model = models::model_by_name(o.model, model_options);
  const auto kind = engines::engine_kind_from_string(o.engine);
  const RngKey key = make_key(o.seed);
  const engines::Engine e = detail::build_engine(kind, model, cfg, fold_in(key, 100));
  nn::FitConfig fit;
  try {
    if (cfg.contains("fit")) fit = cfg.at("fit").get<nn::FitConfig>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("malformed fit config: ") + ex.what());
  }
  const Dataset data = read_dataset_csv(o.data);
  const auto res = engines::fit(e, fold_in(key, 1), data, fit);
  const nlohmann::json resolved = {{"fit", fit}, {"estimator", engines::estimator_to_json(e.estimator())},
                                   {"sampler", e.sampler()}};
  nn::save_params(o.out_params, res.params,
                  {{"engine", e.to_json()},
                   {"model", o.model},
                   {"model_options", model_options},
                   {"config", resolved},
                   {"seed", o.seed},
                   {"best_epoch", res.best_epoch}});
  nn::write_loss_profile_csv(o.out_losses, res.losses);
  out << "trained " << o.engine << " for " << res.losses.train.size() << " epochs (best " << res.best_epoch << ")\n";
}

void cmd_sample(const SampleOpts& o, std::ostream& out) {
  if (o.n < 1) throw ConfigError("--n must be >= 1");
  const auto [params, meta] = nn::load_params(o.params);
  if (!meta.contains("engine") || !meta.contains("model"))
    throw ConfigError("'" + o.params + "' is not an engine parameter document");
  const auto kind = engines::engine_kind_from_string(meta.at("engine").at("kind"));
  if (!o.engine.empty() && engines::engine_kind_from_string(o.engine) != kind)
    throw ConfigError("--engine " + o.engine + " does not match the parameter document (" + engines::to_string(kind) + ")");
  const auto model = models::model_by_name(meta.at("model"), meta.value("model_options", nlohmann::json::object()));
  nlohmann::json cfg = {{"estimator", meta.at("engine").at("estimator")}, {"sampler", meta.at("engine").at("sampler")}};
  if (o.chains > 0) cfg["sampler"]["n_chains"] = o.chains;
  const RngKey key = make_key(o.seed);
  const engines::Engine e = detail::build_engine(kind, model, cfg, fold_in(key, 100));
  const auto obs_v = parse_observable(o.observable);
  const Vector obs = Eigen::Map<const Vector>(obs_v.data(), static_cast<Eigen::Index>(obs_v.size()));
  const auto r = engines::sample_posterior(e, fold_in(key, 2), params, obs, o.n);
  std::string meta_out = o.meta_out;
  if (meta_out.empty()) meta_out = std::filesystem::path(o.out).replace_extension(".json").string();
  engines::write_inference_result(o.out, meta_out, r,
                                  {{"seed", o.seed}, {"sampler", e.sampler()}, {"params", o.params}});
  out << "wrote " << r.posterior.n_chains() * r.posterior.n_draws() << " draws to " << o.out << '\n';
}

void cmd_run(const RunOpts& o, std::ostream& out) {
  nlohmann::json cfg = detail::read_json_file(o.config);
  if (o.seed && cfg.is_object()) cfg["seed"] = *o.seed;
  const nlohmann::json resolved = resolve_experiment(cfg);
  run_experiment(resolved, o.out_dir);
  out << "experiment " << resolved.at("method").get<std::string>() << " on " << resolved.at("model").get<std::string>()
      << " written to " << o.out_dir << '\n';
}

void cmd_plotdata(const PlotOpts& o, std::ostream& out) {
  const auto chains = mcmc::read_chainset_csv(o.posterior);
  std::ofstream f(o.out, std::ios::binary);
  if (!f) throw ConfigError("cannot open '" + o.out + "' for writing");
  write_plot_data(chains, o.kind, f, o.bins);
  out << "wrote " << o.kind << " table to " << o.out << '\n';
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simulation-based inference pipeline", "sbi"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  SimulateOpts so;
  auto* sim = app.add_subcommand("simulate", "Draw (theta, y) pairs from a model's prior and simulator");
  sim->add_option("--model", so.model, "gaussian, slcp, mixture or solar_dynamo")->required();
  sim->add_option("--model-options", so.model_options, "JSON object of model options");
  sim->add_option("--n", so.n, "Number of simulations")->required();
  sim->add_option("--seed", so.seed, "Random seed");
  sim->add_option("--out", so.out, "Dataset CSV path")->required();

  FitOpts fo;
  auto* fit = app.add_subcommand("fit", "Train an engine's estimator on a dataset");
  fit->add_option("--engine", fo.engine, "nle, npe, fmpe or nre")->required();
  fit->add_option("--model", fo.model, "Model whose prior and simulator define the problem")->required();
  fit->add_option("--model-options", fo.model_options, "JSON object of model options");
  fit->add_option("--data", fo.data, "Dataset CSV from simulate")->required();
  fit->add_option("--config", fo.config, "JSON with optional fit, estimator, sampler sections");
  fit->add_option("--seed", fo.seed, "Random seed");
  fit->add_option("--out-params", fo.out_params, "Parameter document path")->required();
  fit->add_option("--out-losses", fo.out_losses, "Loss profile CSV path")->required();

  SampleOpts sa;
  auto* smp = app.add_subcommand("sample", "Draw posterior samples from a trained engine");
  smp->add_option("--params", sa.params, "Parameter document from fit")->required();
  smp->add_option("--engine", sa.engine, "Expected engine kind (checked against the document)");
  smp->add_option("--observable", sa.observable, "Comma-separated values or a file of numbers")->required();
  smp->add_option("--n", sa.n, "Number of posterior draws");
  smp->add_option("--chains", sa.chains, "MCMC chains (nle, nre)");
  smp->add_option("--seed", sa.seed, "Random seed");
  smp->add_option("--out", sa.out, "Posterior CSV path")->required();
  smp->add_option("--meta-out", sa.meta_out, "Diagnostics JSON path (default: --out with .json)");

  RunOpts ro;
  auto* rn = app.add_subcommand("run", "Run a full experiment from a JSON config");
  rn->add_option("--config", ro.config, "Experiment JSON")->required();
  rn->add_option("--out-dir", ro.out_dir, "Directory for all artifacts")->required();
  rn->add_option("--seed", ro.seed, "Overrides the config seed");

  PlotOpts po;
  auto* pl = app.add_subcommand("plotdata", "Emit tidy CSV tables for posterior plots and diagnostics");
  pl->add_option("--posterior", po.posterior, "Posterior CSV")->required();
  pl->add_option("--kind", po.kind, "marginal-hist, pair-grid, rank, ess-evolution or rhat-ress")->required();
  pl->add_option("--out", po.out, "Output CSV path")->required();
  pl->add_option("--bins", po.bins, "Bins (or checkpoints for ess-evolution)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*sim) cmd_simulate(so, out);
    if (*fit) cmd_fit(fo, out);
    if (*smp) cmd_sample(sa, out);
    if (*rn) cmd_run(ro, out);
    if (*pl) cmd_plotdata(po, out);
  } catch (const std::logic_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace sbi::cli
