#include "sbi/mcmc/samplers.hpp"

#include <cmath>
#include <limits>

#include "sbi/core/errors.hpp"

namespace sbi::mcmc {

std::string to_string(SamplerKind k) {
  switch (k) {
    case SamplerKind::rmh: return "rmh";
    case SamplerKind::mala: return "mala";
    case SamplerKind::slice: return "slice";
  }
  return "slice";
}

SamplerKind sampler_kind_from_string(const std::string& name) {
  if (name == "rmh") return SamplerKind::rmh;
  if (name == "mala") return SamplerKind::mala;
  if (name == "slice") return SamplerKind::slice;
  throw ConfigError("unknown sampler '" + name + "' (expected rmh, mala or slice)");
}

void SamplerConfig::validate() const {
  if (n_chains < 1) throw ConfigError("sampler: n_chains must be >= 1");
  if (n_warmup < 0 || n_draws < 1) throw ConfigError("sampler: need n_warmup >= 0 and n_draws >= 1");
  if (!(rmh_step >= 0.0)) throw ConfigError("sampler: rmh_step must be >= 0");
  if (mala_step && !(*mala_step > 0.0)) throw ConfigError("sampler: mala_step must be > 0");
  if (!(slice_width > 0.0)) throw ConfigError("sampler: slice_width must be > 0");
  if (slice_max_steps < 1) throw ConfigError("sampler: slice_max_steps must be >= 1");
}

void to_json(nlohmann::json& j, const SamplerConfig& c) {
  j = nlohmann::json{{"kind", to_string(c.kind)},          {"n_chains", c.n_chains},
                     {"n_warmup", c.n_warmup},             {"n_draws", c.n_draws},
                     {"rmh_step", c.rmh_step},             {"slice_width", c.slice_width},
                     {"slice_max_steps", c.slice_max_steps}};
  j["mala_step"] = c.mala_step ? nlohmann::json(*c.mala_step) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, SamplerConfig& c) {
  const SamplerConfig d;
  c.kind = sampler_kind_from_string(j.value("kind", to_string(d.kind)));
  c.n_chains = j.value("n_chains", d.n_chains);
  c.n_warmup = j.value("n_warmup", d.n_warmup);
  c.n_draws = j.value("n_draws", d.n_draws);
  c.rmh_step = j.value("rmh_step", d.rmh_step);
  c.mala_step.reset();
  if (j.contains("mala_step") && !j.at("mala_step").is_null()) c.mala_step = j.at("mala_step").get<double>();
  c.slice_width = j.value("slice_width", d.slice_width);
  c.slice_max_steps = j.value("slice_max_steps", d.slice_max_steps);
  c.validate();
}

Vector numerical_gradient(const LogDensity& f, const Vector& x, double h) {
  Vector g(x.size());
  Vector p = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    p[j] = x[j] + h;
    const double up = f(p);
    p[j] = x[j] - h;
    const double down = f(p);
    p[j] = x[j];
    g[j] = (up - down) / (2.0 * h);
  }
  return g;
}

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// NaN densities are treated as zero density.
double safe_eval(const LogDensity& f, const Vector& x) {
  const double v = f(x);
  return std::isnan(v) ? kNegInf : v;
}

Vector draw_normal(Generator& gen, Eigen::Index d) {
  Vector z(d);
  for (Eigen::Index j = 0; j < d; ++j) z[j] = gen.normal();
  return z;
}

void rmh_step(const SamplerConfig& cfg, const LogDensity& f, Vector& x, double& lp, Generator& gen) {
  const Vector prop = x + cfg.rmh_step * draw_normal(gen, x.size());
  const double lp_prop = safe_eval(f, prop);
  if (std::log(gen.uniform_open_low()) < lp_prop - lp) {
    x = prop;
    lp = lp_prop;
  }
}

struct MalaState {
  Vector grad;
};

void mala_step(double eps, const LogDensity& f, const Gradient& g, Vector& x, double& lp, MalaState& st,
               Generator& gen) {
  const double half = 0.5 * eps * eps;
  const Vector prop = x + half * st.grad + eps * draw_normal(gen, x.size());
  const double lp_prop = safe_eval(f, prop);
  const double log_u = std::log(gen.uniform_open_low());
  if (!std::isfinite(lp_prop)) return;
  const Vector grad_prop = g(prop);
  if (!grad_prop.allFinite()) return;
  // log q(x | prop) - log q(prop | x) for the Langevin proposal.
  const double fwd = (prop - x - half * st.grad).squaredNorm();
  const double bwd = (x - prop - half * grad_prop).squaredNorm();
  const double log_alpha = lp_prop - lp + (fwd - bwd) / (2.0 * eps * eps);
  if (log_u < log_alpha) {
    x = prop;
    lp = lp_prop;
    st.grad = grad_prop;
  }
}

// Coordinate-wise slice sampling with stepping out and shrinkage.
void slice_step(const SamplerConfig& cfg, const LogDensity& f, Vector& x, double& lp, Generator& gen) {
  const double w = cfg.slice_width;
  Vector p = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double level = lp + std::log(gen.uniform_open_low());
    const double x0 = x[j];
    double lo = x0 - w * gen.uniform();
    double hi = lo + w;
    auto at = [&](double v) {
      p[j] = v;
      return safe_eval(f, p);
    };
    auto left = static_cast<long>(std::floor(cfg.slice_max_steps * gen.uniform()));
    auto right = static_cast<long>(cfg.slice_max_steps) - 1 - left;
    while (left > 0 && at(lo) > level) {
      lo -= w;
      --left;
    }
    while (right > 0 && at(hi) > level) {
      hi += w;
      --right;
    }
    for (;;) {
      const double cand = gen.uniform(lo, hi);
      const double lp_cand = at(cand);
      if (lp_cand > level) {
        x[j] = cand;
        lp = lp_cand;
        break;
      }
      if (cand < x0)
        lo = cand;
      else
        hi = cand;
      if (hi - lo < 1e-300) {  // interval collapsed onto the current point
        p[j] = x0;
        break;
      }
    }
    p[j] = x[j];
  }
}

}  // namespace

Matrix run_chain(const SamplerConfig& cfg, const LogDensity& log_density, const Vector& init, RngKey key,
                 const Gradient& grad) {
  cfg.validate();
  if (!init.allFinite()) throw ContractError("sample: non-finite initial state");
  Vector x = init;
  double lp = log_density(x);
  if (!std::isfinite(lp)) throw ContractError("sample: log density is not finite at the initial state");
  const auto dim = init.size();
  const double eps = cfg.mala_step.value_or(0.1 / std::sqrt(static_cast<double>(dim)));
  const Gradient g = grad ? grad : Gradient([&](const Vector& v) { return numerical_gradient(log_density, v); });
  MalaState st;
  if (cfg.kind == SamplerKind::mala) st.grad = g(x);

  Generator gen(key);
  const int total = cfg.n_warmup + cfg.n_draws;
  Matrix out(total, dim);
  for (int it = 0; it < total; ++it) {
    switch (cfg.kind) {
      case SamplerKind::rmh: rmh_step(cfg, log_density, x, lp, gen); break;
      case SamplerKind::mala: mala_step(eps, log_density, g, x, lp, st, gen); break;
      case SamplerKind::slice: slice_step(cfg, log_density, x, lp, gen); break;
    }
    out.row(it) = x.transpose();
  }
  return out;
}

ChainSet sample(const SamplerConfig& cfg, const LogDensity& log_density, const Matrix& init, RngKey key,
                const ParamLayout& layout, const Gradient& grad) {
  cfg.validate();
  if (init.cols() != layout.total_dim()) throw ContractError("sample: init width disagrees with the layout");
  if (init.rows() != 1 && init.rows() != cfg.n_chains)
    throw ContractError("sample: init needs one row or one row per chain");
  ChainSet cs;
  cs.layout = layout;
  for (int c = 0; c < cfg.n_chains; ++c) {
    const Vector x0 = init.row(init.rows() == 1 ? 0 : c).transpose();
    const Matrix full = run_chain(cfg, log_density, x0, fold_in(key, static_cast<std::uint64_t>(c)), grad);
    cs.chains.push_back(full.bottomRows(cfg.n_draws));
  }
  return cs;
}

}  // namespace sbi::mcmc
