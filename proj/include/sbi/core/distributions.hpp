#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sbi/core/rng.hpp"
#include "sbi/core/types.hpp"

namespace sbi {

enum class SupportKind { real, positive, interval, discrete };

/// Per-coordinate support; `lo`/`hi` are meaningful for `interval` only.
struct Support {
  SupportKind kind = SupportKind::real;
  double lo = 0.0;
  double hi = 0.0;
};

struct Normal {
  Vector loc;
  Vector scale;
};

struct HalfNormal {
  Vector scale;
};

struct Uniform {
  Vector lo;
  Vector hi;
};

/// A single categorical variable; the event is the category index stored as
/// a real number.
struct Categorical {
  Vector logits;
};

struct DiagMvNormal {
  Vector loc;
  Vector scales;
};

struct MixtureSameFamily {
  Vector weights;  // normalized on construction
  std::vector<DiagMvNormal> components;
};

/// Closed set of marginal families usable in a prior. Construction validates
/// parameters and throws ConfigError on violations (non-positive scales,
/// lo >= hi, non-finite logits, empty or ragged mixtures).
class Distribution {
 public:
  using Kind = std::variant<Normal, HalfNormal, Uniform, Categorical, DiagMvNormal, MixtureSameFamily>;

  explicit Distribution(Kind kind);

  static Distribution normal(int dim, double loc, double scale);
  static Distribution half_normal(int dim, double scale);
  static Distribution uniform(int dim, double lo, double hi);
  static Distribution categorical(Vector logits);
  static Distribution diag_mv_normal(Vector loc, Vector scales);
  static Distribution mixture(Vector weights, std::vector<DiagMvNormal> components);

  [[nodiscard]] int dim() const noexcept { return dim_; }
  [[nodiscard]] const Kind& kind() const noexcept { return kind_; }
  [[nodiscard]] std::string kind_name() const;

  /// n x dim matrix of independent draws.
  [[nodiscard]] Matrix sample(Generator& gen, Eigen::Index n) const;
  /// Log density of one event; -inf outside the support.
  [[nodiscard]] double log_prob(std::span<const double> x) const;
  [[nodiscard]] Vector log_prob(const Matrix& x) const;
  [[nodiscard]] Support support(int coord) const;

 private:
  Kind kind_;
  int dim_ = 0;
};

}  // namespace sbi
