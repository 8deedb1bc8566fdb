#pragma once

#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sbi/core/types.hpp"

namespace sbi::nn {

/// Dense 64-bit tensor of rank <= 2, row-major. A bias is stored as 1 x n.
using Tensor = sbi::Matrix;

class Tape;

namespace detail {
struct Node {
  Tensor value;
  Tensor grad;  // empty until something flows into it
  std::function<void()> backward;
};
}  // namespace detail

/// Value in a reverse-mode graph. A Var without a tape is a constant: ops on
/// constants evaluate eagerly and record nothing, so the same model code
/// serves training (leaves on a tape) and inference (constants only).
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value);

  [[nodiscard]] const Tensor& value() const;
  /// Accumulated gradient; zeros of the value's shape if nothing reached it.
  [[nodiscard]] Tensor grad() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
  [[nodiscard]] double item() const;
  [[nodiscard]] bool requires_grad() const noexcept { return tape_ != nullptr; }
  [[nodiscard]] Tape* tape() const noexcept { return tape_; }
  [[nodiscard]] bool defined() const noexcept { return node_ != nullptr; }

 private:
  friend class Tape;
  friend struct OpBuilder;
  std::shared_ptr<detail::Node> node_;
  Tape* tape_ = nullptr;
};

/// Records nodes in creation order; `backward` sweeps them in reverse.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);
  /// Seeds d(loss)/d(loss) = 1 and propagates. `loss` must be 1 x 1 and
  /// recorded on this tape.
  void backward(const Var& loss);
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend struct OpBuilder;
  std::vector<std::shared_ptr<detail::Node>> nodes_;
};

// Elementwise binary ops require equal shapes.
Var operator+(const Var& a, const Var& b);
Var operator-(const Var& a, const Var& b);
Var operator*(const Var& a, const Var& b);
Var operator-(const Var& a);
Var operator*(const Var& a, double s);
Var operator*(double s, const Var& a);
Var operator+(const Var& a, double s);
Var operator-(const Var& a, double s);

Var matmul(const Var& a, const Var& b);
/// a (n x m) plus a 1 x m row broadcast over rows.
Var add_row(const Var& a, const Var& row);
/// a (n x m) times / plus an n x 1 column broadcast over columns.
Var mul_col(const Var& a, const Var& col);
Var add_col(const Var& a, const Var& col);

Var tanh(const Var& a);
Var relu(const Var& a);
/// Exact GELU, x * Phi(x).
Var gelu(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
/// Gradient passes only where lo <= a <= hi.
Var clamp(const Var& a, double lo, double hi);

/// Sum of all entries, 1 x 1.
Var sum(const Var& a);
Var mean(const Var& a);
/// Per-row sums, n x 1.
Var row_sum(const Var& a);
/// Stable per-row log-sum-exp, n x 1.
Var logsumexp_rows(const Var& a);

Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
/// out[:, j] = a[:, perm[j]].
Var permute_cols(const Var& a, std::span<const int> perm);
/// Reshapes a stacked (m*n) x 1 column into n x m: block j becomes column j.
Var blocks_to_cols(const Var& a, Eigen::Index m);

/// Named parameter tree; names look like "maf/layer_0/linear_1/w".
using NetParams = std::map<std::string, Tensor>;
using VarParams = std::map<std::string, Var>;
using LossFn = std::function<Var(const VarParams&)>;

VarParams as_constants(const NetParams& params);
VarParams as_leaves(Tape& tape, const NetParams& params);
NetParams grads_of(const VarParams& leaves);

/// Loss value and exact reverse-mode gradient at `params`.
std::pair<double, NetParams> value_and_grad(const LossFn& loss, const NetParams& params);
NetParams grad(const LossFn& loss, const NetParams& params);

/// Named lookup that reports the missing name.
const Var& param(const VarParams& params, const std::string& name);
const Tensor& param(const NetParams& params, const std::string& name);

}  // namespace sbi::nn
