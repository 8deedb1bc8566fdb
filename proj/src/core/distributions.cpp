#include "sbi/core/distributions.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "sbi/core/errors.hpp"

namespace sbi {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

bool all_finite(const Vector& v) { return v.allFinite(); }

double normal_log_prob(std::span<const double> x, const Vector& loc, const Vector& scale) {
  double lp = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double z = (x[i] - loc[static_cast<Eigen::Index>(i)]) / scale[static_cast<Eigen::Index>(i)];
    lp += -0.5 * z * z - std::log(scale[static_cast<Eigen::Index>(i)]) - kHalfLog2Pi;
  }
  return lp;
}

double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

Vector broadcast(const Vector& v, Eigen::Index n) {
  if (v.size() == n) return v;
  return Vector::Constant(n, v[0]);
}

}  // namespace

Distribution::Distribution(Kind kind) : kind_(std::move(kind)) {
  std::visit(
      Overloaded{
          [this](Normal& d) {
            require(d.loc.size() >= 1, "Normal: empty loc");
            require(d.scale.size() == 1 || d.scale.size() == d.loc.size(), "Normal: scale size mismatch");
            d.scale = broadcast(d.scale, d.loc.size());
            require(all_finite(d.loc) && all_finite(d.scale) && (d.scale.array() > 0).all(),
                    "Normal: scale must be positive and parameters finite");
            dim_ = static_cast<int>(d.loc.size());
          },
          [this](HalfNormal& d) {
            require(d.scale.size() >= 1, "HalfNormal: empty scale");
            require(all_finite(d.scale) && (d.scale.array() > 0).all(), "HalfNormal: scale must be positive");
            dim_ = static_cast<int>(d.scale.size());
          },
          [this](Uniform& d) {
            require(d.lo.size() >= 1 && d.lo.size() == d.hi.size(), "Uniform: bound size mismatch");
            require(all_finite(d.lo) && all_finite(d.hi) && (d.lo.array() < d.hi.array()).all(),
                    "Uniform: requires finite lo < hi elementwise");
            dim_ = static_cast<int>(d.lo.size());
          },
          [this](Categorical& d) {
            require(d.logits.size() >= 1 && all_finite(d.logits), "Categorical: logits must be finite and non-empty");
            dim_ = 1;
          },
          [this](DiagMvNormal& d) {
            require(d.loc.size() >= 1 && d.loc.size() == d.scales.size(), "DiagMvNormal: size mismatch");
            require(all_finite(d.loc) && all_finite(d.scales) && (d.scales.array() > 0).all(),
                    "DiagMvNormal: scales must be positive");
            dim_ = static_cast<int>(d.loc.size());
          },
          [this](MixtureSameFamily& d) {
            require(!d.components.empty(), "MixtureSameFamily: no components");
            require(static_cast<std::size_t>(d.weights.size()) == d.components.size(),
                    "MixtureSameFamily: weights/components size mismatch");
            require(all_finite(d.weights) && (d.weights.array() >= 0).all() && d.weights.sum() > 0,
                    "MixtureSameFamily: weights must be non-negative with positive sum");
            d.weights /= d.weights.sum();
            const auto dim = d.components.front().loc.size();
            for (const auto& c : d.components) {
              require(c.loc.size() == dim && c.scales.size() == dim, "MixtureSameFamily: ragged components");
              require(all_finite(c.loc) && (c.scales.array() > 0).all(), "MixtureSameFamily: invalid component");
            }
            dim_ = static_cast<int>(dim);
          },
      },
      kind_);
}

Distribution Distribution::normal(int dim, double loc, double scale) {
  return Distribution(Normal{Vector::Constant(dim, loc), Vector::Constant(dim, scale)});
}
Distribution Distribution::half_normal(int dim, double scale) {
  return Distribution(HalfNormal{Vector::Constant(dim, scale)});
}
Distribution Distribution::uniform(int dim, double lo, double hi) {
  return Distribution(Uniform{Vector::Constant(dim, lo), Vector::Constant(dim, hi)});
}
Distribution Distribution::categorical(Vector logits) { return Distribution(Categorical{std::move(logits)}); }
Distribution Distribution::diag_mv_normal(Vector loc, Vector scales) {
  return Distribution(DiagMvNormal{std::move(loc), std::move(scales)});
}
Distribution Distribution::mixture(Vector weights, std::vector<DiagMvNormal> components) {
  return Distribution(MixtureSameFamily{std::move(weights), std::move(components)});
}

std::string Distribution::kind_name() const {
  return std::visit(Overloaded{
                        [](const Normal&) { return std::string("normal"); },
                        [](const HalfNormal&) { return std::string("half_normal"); },
                        [](const Uniform&) { return std::string("uniform"); },
                        [](const Categorical&) { return std::string("categorical"); },
                        [](const DiagMvNormal&) { return std::string("diag_mv_normal"); },
                        [](const MixtureSameFamily&) { return std::string("mixture"); },
                    },
                    kind_);
}

Matrix Distribution::sample(Generator& gen, Eigen::Index n) const {
  Matrix out(n, dim_);
  std::visit(Overloaded{
                 [&](const Normal& d) {
                   for (Eigen::Index r = 0; r < n; ++r)
                     for (int j = 0; j < dim_; ++j) out(r, j) = d.loc[j] + d.scale[j] * gen.normal();
                 },
                 [&](const HalfNormal& d) {
                   for (Eigen::Index r = 0; r < n; ++r)
                     for (int j = 0; j < dim_; ++j) out(r, j) = d.scale[j] * std::abs(gen.normal());
                 },
                 [&](const Uniform& d) {
                   for (Eigen::Index r = 0; r < n; ++r)
                     for (int j = 0; j < dim_; ++j) out(r, j) = gen.uniform(d.lo[j], d.hi[j]);
                 },
                 [&](const Categorical& d) {
                   const Vector p = (d.logits.array() - d.logits.maxCoeff()).exp();
                   const double total = p.sum();
                   for (Eigen::Index r = 0; r < n; ++r) {
                     const double u = gen.uniform() * total;
                     double acc = 0.0;
                     Eigen::Index k = 0;
                     for (; k < p.size() - 1; ++k) {
                       acc += p[k];
                       if (u < acc) break;
                     }
                     out(r, 0) = static_cast<double>(k);
                   }
                 },
                 [&](const DiagMvNormal& d) {
                   for (Eigen::Index r = 0; r < n; ++r)
                     for (int j = 0; j < dim_; ++j) out(r, j) = d.loc[j] + d.scales[j] * gen.normal();
                 },
                 [&](const MixtureSameFamily& d) {
                   for (Eigen::Index r = 0; r < n; ++r) {
                     const double u = gen.uniform();
                     double acc = 0.0;
                     std::size_t k = 0;
                     for (; k + 1 < d.components.size(); ++k) {
                       acc += d.weights[static_cast<Eigen::Index>(k)];
                       if (u < acc) break;
                     }
                     const auto& c = d.components[k];
                     for (int j = 0; j < dim_; ++j) out(r, j) = c.loc[j] + c.scales[j] * gen.normal();
                   }
                 },
             },
             kind_);
  return out;
}

double Distribution::log_prob(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != dim_) throw ContractError("Distribution::log_prob: event size mismatch");
  return std::visit(
      Overloaded{
          [&](const Normal& d) { return normal_log_prob(x, d.loc, d.scale); },
          [&](const HalfNormal& d) {
            double lp = 0.0;
            for (int j = 0; j < dim_; ++j) {
              if (x[static_cast<std::size_t>(j)] < 0.0) return kNegInf;
              const double z = x[static_cast<std::size_t>(j)] / d.scale[j];
              lp += 0.5 * std::log(2.0 / std::numbers::pi) - std::log(d.scale[j]) - 0.5 * z * z;
            }
            return lp;
          },
          [&](const Uniform& d) {
            double lp = 0.0;
            for (int j = 0; j < dim_; ++j) {
              const double v = x[static_cast<std::size_t>(j)];
              if (!(v >= d.lo[j] && v <= d.hi[j])) return kNegInf;
              lp -= std::log(d.hi[j] - d.lo[j]);
            }
            return lp;
          },
          [&](const Categorical& d) {
            const double v = x[0];
            const double k = std::round(v);
            if (v != k || k < 0 || k >= static_cast<double>(d.logits.size())) return kNegInf;
            return d.logits[static_cast<Eigen::Index>(k)] - log_sum_exp(d.logits);
          },
          [&](const DiagMvNormal& d) { return normal_log_prob(x, d.loc, d.scales); },
          [&](const MixtureSameFamily& d) {
            Vector terms(static_cast<Eigen::Index>(d.components.size()));
            for (std::size_t k = 0; k < d.components.size(); ++k) {
              const auto ki = static_cast<Eigen::Index>(k);
              terms[ki] = std::log(d.weights[ki]) + normal_log_prob(x, d.components[k].loc, d.components[k].scales);
            }
            return log_sum_exp(terms);
          },
      },
      kind_);
}

Vector Distribution::log_prob(const Matrix& x) const {
  if (x.cols() != dim_) throw ContractError("Distribution::log_prob: column count mismatch");
  Vector out(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    out[r] = log_prob(std::span<const double>(x.row(r).data(), static_cast<std::size_t>(dim_)));
  return out;
}

Support Distribution::support(int coord) const {
  if (coord < 0 || coord >= dim_) throw ContractError("Distribution::support: coordinate out of range");
  return std::visit(Overloaded{
                        [](const HalfNormal&) { return Support{SupportKind::positive}; },
                        [coord](const Uniform& d) { return Support{SupportKind::interval, d.lo[coord], d.hi[coord]}; },
                        [](const Categorical&) { return Support{SupportKind::discrete}; },
                        [](const auto&) { return Support{SupportKind::real}; },
                    },
                    kind_);
}

}  // namespace sbi
