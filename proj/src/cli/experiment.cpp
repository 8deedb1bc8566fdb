#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "common.hpp"
#include "sbi/abc/abc.hpp"
#include "sbi/cli/cli.hpp"
#include "sbi/core/errors.hpp"
#include "sbi/ndnet/params_io.hpp"
#include "sbi/summaries/summaries.hpp"

namespace sbi::cli {

namespace detail {

Simulator model_simulator(const models::BenchmarkModel& m) {
  return [m](RngKey key, const ThetaBatch& theta) { return m.simulate(key, theta); };
}

engines::EstimatorSpec resolve_estimator(engines::EngineKind kind, int theta_dim, int y_dim, const nlohmann::json& patch) {
  nlohmann::json j = engines::estimator_to_json(engines::default_estimator(kind, theta_dim, y_dim));
  if (!patch.is_null()) {
    if (!patch.is_object()) throw ConfigError("'estimator' must be an object");
    // Switching the estimator type starts from that type's defaults.
    if (patch.contains("type") && patch.at("type") != j.at("type")) {
      const auto type = patch.at("type").get<std::string>();
      if (type == "mdn") {
        flows::MdnSpec s;
        s.event_dim = kind == engines::EngineKind::nle ? y_dim : theta_dim;
        s.context_dim = kind == engines::EngineKind::nle ? theta_dim : y_dim;
        j = engines::estimator_to_json(s);
      } else if (type == "maf") {
        flows::MafSpec s;
        s.event_dim = kind == engines::EngineKind::nle ? y_dim : theta_dim;
        s.context_dim = kind == engines::EngineKind::nle ? theta_dim : y_dim;
        j = engines::estimator_to_json(s);
      }
    }
    j.merge_patch(patch);
  }
  return engines::estimator_from_json(j);
}

engines::Engine build_engine(engines::EngineKind kind, const models::BenchmarkModel& m, const nlohmann::json& cfg,
                             RngKey probe_key) {
  const auto est = resolve_estimator(kind, m.prior.total_dim(), m.y_dim, cfg.value("estimator", nlohmann::json()));
  mcmc::SamplerConfig sampler;
  if (cfg.contains("sampler")) {
    try {
      sampler = cfg.at("sampler").get<mcmc::SamplerConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed sampler config: ") + e.what());
    }
  }
  return engines::Engine(kind, m.prior, model_simulator(m), est, sampler, probe_key);
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse '" + path + "': " + e.what());
  }
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
}

void write_round_losses_csv(const std::string& path, const std::vector<nn::LossProfile>& rounds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out << "round,epoch,train,val\n";
  for (std::size_t r = 0; r < rounds.size(); ++r)
    for (std::size_t e = 0; e < rounds[r].train.size(); ++e)
      out << r + 1 << ',' << e + 1 << ',' << format_double(rounds[r].train[e]) << ','
          << format_double(rounds[r].val[e]) << '\n';
}

}  // namespace detail

namespace {

const std::set<std::string> kMethods{"nle", "npe", "fmpe", "nre", "smc_abc", "rejection_abc"};

bool is_neural(const std::string& method) { return method != "smc_abc" && method != "rejection_abc"; }

template <class T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  try {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

nlohmann::json fit_json(const nlohmann::json& patch) {
  nn::FitConfig f;
  try {
    if (!patch.is_null()) f = patch.get<nn::FitConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed fit config: ") + e.what());
  }
  return f;
}

void write_particles_csv(const std::string& path, const abc::ParticleSet& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  for (const auto& label : p.thetas.layout().column_labels()) out << label << ',';
  out << "weight\n";
  const Matrix flat = p.thetas.flatten();
  for (Eigen::Index i = 0; i < flat.rows(); ++i) {
    for (Eigen::Index j = 0; j < flat.cols(); ++j) out << format_double(flat(i, j)) << ',';
    out << format_double(p.weights[i]) << '\n';
  }
}

}  // namespace

std::vector<double> parse_observable(const std::string& text_or_path) {
  std::string text = text_or_path;
  if (std::filesystem::is_regular_file(text_or_path)) {
    std::ifstream in(text_or_path);
    std::stringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  for (char& c : text)
    if (c == ',' || std::isspace(static_cast<unsigned char>(c))) c = ' ';
  std::istringstream in(text);
  std::vector<double> out;
  std::string tok;
  while (in >> tok) out.push_back(parse_csv_double(tok));
  if (out.empty()) throw ConfigError("empty observable");
  return out;
}

nlohmann::json resolve_experiment(const nlohmann::json& config) {
  if (!config.is_object()) throw ConfigError("experiment config must be a JSON object");
  static const std::set<std::string> known{"model",   "model_options", "method",    "seed",     "observable",
                                           "n_rounds", "n_per_round",   "warm_start", "n_samples", "estimator",
                                           "fit",     "sampler",       "abc"};
  for (const auto& [k, _] : config.items())
    if (!known.count(k)) throw ConfigError("unknown experiment key '" + k + "'");

  nlohmann::json r;
  r["model"] = get_or<std::string>(config, "model", "gaussian");
  r["model_options"] = config.value("model_options", nlohmann::json::object());
  const auto model = models::model_by_name(r["model"], r["model_options"]);
  r["method"] = get_or<std::string>(config, "method", "nle");
  if (!kMethods.count(r["method"]))
    throw ConfigError("unknown method '" + r["method"].get<std::string>() +
                      "' (expected nle, npe, fmpe, nre, smc_abc or rejection_abc)");
  r["seed"] = get_or<std::uint64_t>(config, "seed", 0);

  std::vector<double> obs;
  if (config.contains("observable") && !config.at("observable").is_null()) {
    obs = get_or<std::vector<double>>(config, "observable", {});
  } else if (model.observation) {
    obs.assign(model.observation->data(), model.observation->data() + model.observation->size());
  } else {
    throw ConfigError("model '" + model.name + "' has no default observation; set 'observable'");
  }
  if (static_cast<int>(obs.size()) != model.y_dim)
    throw ConfigError("observable has " + std::to_string(obs.size()) + " entries, model '" + model.name +
                      "' produces " + std::to_string(model.y_dim));
  r["observable"] = obs;

  const std::string method = r["method"];
  if (is_neural(method)) {
    const auto kind = engines::engine_kind_from_string(method);
    r["n_rounds"] = get_or<int>(config, "n_rounds", 1);
    r["n_per_round"] = get_or<long>(config, "n_per_round", 1000);
    r["warm_start"] = get_or<bool>(config, "warm_start", true);
    r["n_samples"] = get_or<long>(config, "n_samples", 1000);
    if (r["n_rounds"].get<int>() < 1 || r["n_per_round"].get<long>() < 2 || r["n_samples"].get<long>() < 1)
      throw ConfigError("n_rounds, n_per_round and n_samples must be positive (n_per_round >= 2)");
    r["estimator"] = engines::estimator_to_json(detail::resolve_estimator(
        kind, model.prior.total_dim(), model.y_dim, config.value("estimator", nlohmann::json())));
    r["fit"] = fit_json(config.value("fit", nlohmann::json()));
    mcmc::SamplerConfig s;
    try {
      if (config.contains("sampler")) s = config.at("sampler").get<mcmc::SamplerConfig>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed sampler config: ") + e.what());
    }
    r["sampler"] = s;
  } else {
    const nlohmann::json a = config.value("abc", nlohmann::json::object());
    if (!a.is_object()) throw ConfigError("abc section must be a JSON object");
    static const std::set<std::string> abc_keys{"summary", "learned", "smc", "n_accept", "epsilon", "max_simulations"};
    for (const auto& [k, _] : a.items())
      if (!abc_keys.count(k)) throw ConfigError("unknown abc key '" + k + "'");
    nlohmann::json ra;
    ra["summary"] = get_or<std::string>(a, "summary", "identity");
    if (ra["summary"] != "identity" && ra["summary"] != "learned")
      throw ConfigError("abc.summary must be 'identity' or 'learned'");
    if (ra["summary"] == "learned") {
      const nlohmann::json l = a.value("learned", nlohmann::json::object());
      ra["learned"] = {{"n_sims", get_or<long>(l, "n_sims", 5000)},
                       {"embed_dim", get_or<int>(l, "embed_dim", model.prior.total_dim())},
                       {"hidden", get_or<std::vector<int>>(l, "hidden", {64, 64})},
                       {"fit", fit_json(l.value("fit", nlohmann::json()))}};
    }
    if (method == "smc_abc") {
      abc::SmcConfig s;
      try {
        if (a.contains("smc")) s = a.at("smc").get<abc::SmcConfig>();
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed abc.smc config: ") + e.what());
      }
      ra["smc"] = s;
    } else {
      ra["n_accept"] = get_or<long>(a, "n_accept", 1000);
      ra["epsilon"] = get_or<double>(a, "epsilon", 1.0);
      ra["max_simulations"] = get_or<long>(a, "max_simulations", 10'000'000);
      if (!(ra["epsilon"].get<double>() > 0.0) || ra["n_accept"].get<long>() < 1)
        throw ConfigError("abc.epsilon must be positive and abc.n_accept >= 1");
    }
    r["abc"] = ra;
  }
  return r;
}

void run_experiment(const nlohmann::json& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + out_dir + "'");
  const auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };
  detail::write_json_file(path("resolved_config.json"), cfg);

  const auto model = models::model_by_name(cfg.at("model"), cfg.at("model_options"));
  const RngKey key = make_key(cfg.at("seed").get<std::uint64_t>());
  const auto obs_v = cfg.at("observable").get<std::vector<double>>();
  const Vector obs = Eigen::Map<const Vector>(obs_v.data(), static_cast<Eigen::Index>(obs_v.size()));
  const std::string method = cfg.at("method");

  if (is_neural(method)) {
    const auto kind = engines::engine_kind_from_string(method);
    const engines::Engine e = detail::build_engine(kind, model, cfg, fold_in(key, 100));
    const auto fit = cfg.at("fit").get<nn::FitConfig>();
    const auto seq = engines::sequential_run(e, fold_in(key, 1), obs, cfg.at("n_rounds").get<int>(),
                                             cfg.at("n_per_round").get<long>(), fit, cfg.at("warm_start").get<bool>());
    write_dataset_csv(path("data.csv"), seq.data);
    nn::save_params(path("params.json"), seq.params,
                    {{"engine", e.to_json()}, {"model", cfg.at("model")}, {"model_options", cfg.at("model_options")},
                     {"config", cfg}});
    detail::write_round_losses_csv(path("losses.csv"), seq.losses);
    const auto post = engines::sample_posterior(e, fold_in(key, 2), seq.params, obs, cfg.at("n_samples").get<long>());
    engines::write_inference_result(path("posterior.csv"), path("posterior.json"), post, {{"config", cfg}});
    return;
  }

  const nlohmann::json& a = cfg.at("abc");
  const Simulator sim = detail::model_simulator(model);
  SummaryFn summary = summaries::identity_summary;
  if (a.at("summary") == "learned") {
    const auto& l = a.at("learned");
    const auto s = summaries::regression_summary_train(model.prior, sim, fold_in(key, 3), l.at("n_sims").get<long>(),
                                                       l.at("embed_dim").get<int>(), l.at("hidden").get<std::vector<int>>(),
                                                       l.at("fit").get<nn::FitConfig>());
    detail::write_json_file(path("summary.json"), summaries::regression_summary_to_json(s));
    summary = s.as_function();
  }
  if (method == "smc_abc") {
    const auto smc = a.at("smc").get<abc::SmcConfig>();
    const auto res = abc::smc_abc(model.prior, sim, summary, summaries::euclidean_distance, obs, fold_in(key, 1), smc);
    abc::write_smc_trace_csv(path("epsilon_trace.csv"), res);
    write_particles_csv(path("particles.csv"), res.particles);
    const RowVector mean = res.weighted_mean();
    detail::write_json_file(path("posterior.json"),
                            {{"engine", method},
                             {"parameters", res.particles.thetas.layout().column_labels()},
                             {"weighted_mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
                             {"final_epsilon", res.particles.epsilon},
                             {"rounds_run", res.rounds.size()},
                             {"config", cfg}});
    return;
  }
  abc::RejectionConfig rc;
  rc.max_simulations = a.at("max_simulations").get<long>();
  const ThetaBatch th = abc::rejection_abc(model.prior, sim, summary, summaries::euclidean_distance, obs,
                                           fold_in(key, 1), a.at("n_accept").get<long>(), a.at("epsilon").get<double>(), rc);
  mcmc::ChainSet cs;
  cs.chains = {th.flatten()};
  cs.layout = th.layout();
  mcmc::write_chainset_csv(path("posterior.csv"), cs);
  const RowVector mean = cs.pooled().colwise().mean();
  detail::write_json_file(path("posterior.json"),
                          {{"engine", method},
                           {"parameters", cs.layout.column_labels()},
                           {"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
                           {"config", cfg}});
}

}  // namespace sbi::cli
