#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sbi/core/distributions.hpp"
#include "sbi/core/rng.hpp"
#include "sbi/core/types.hpp"

namespace sbi {

/// Names and widths of the parameter blocks, in insertion order. Flattening
/// concatenates blocks in this order.
struct ParamLayout {
  std::vector<std::string> names;
  std::vector<int> dims;

  [[nodiscard]] int total_dim() const noexcept;
  [[nodiscard]] int offset(std::size_t block) const;
  /// "<name>_<i>" for every flattened coordinate.
  [[nodiscard]] std::vector<std::string> column_labels() const;

  bool operator==(const ParamLayout&) const = default;
};

/// Named (n x dim) blocks sharing a leading dimension.
class ThetaBatch {
 public:
  ThetaBatch() = default;

  /// Appends a block. Throws ContractError on duplicate names or row mismatch.
  void add(std::string name, Matrix values);

  [[nodiscard]] Eigen::Index rows() const noexcept;
  [[nodiscard]] bool empty() const noexcept { return entries_.empty(); }
  [[nodiscard]] const Matrix& at(std::string_view name) const;
  [[nodiscard]] const std::vector<std::pair<std::string, Matrix>>& entries() const noexcept { return entries_; }
  [[nodiscard]] ParamLayout layout() const;

  [[nodiscard]] Matrix flatten() const;
  static ThetaBatch unflatten(const ParamLayout& layout, const Matrix& flat);

  [[nodiscard]] ThetaBatch select_rows(std::span<const Eigen::Index> rows) const;
  [[nodiscard]] ThetaBatch middle_rows(Eigen::Index start, Eigen::Index count) const;

 private:
  std::vector<std::pair<std::string, Matrix>> entries_;
};

/// Ordered product of independent named marginals.
class PriorSpec {
 public:
  PriorSpec() = default;

  /// Throws ConfigError on duplicate names.
  PriorSpec& add(std::string name, Distribution dist);

  [[nodiscard]] int total_dim() const noexcept { return total_dim_; }
  [[nodiscard]] const std::vector<std::pair<std::string, Distribution>>& marginals() const noexcept {
    return marginals_;
  }
  [[nodiscard]] ParamLayout layout() const;
  /// Support of flattened coordinate j.
  [[nodiscard]] Support support(int flat_coord) const;
  /// Log density of one flattened parameter vector.
  [[nodiscard]] double log_prob_flat(std::span<const double> theta) const;

 private:
  std::vector<std::pair<std::string, Distribution>> marginals_;
  int total_dim_ = 0;
};

/// Each marginal is drawn from its own child key fold_in(key, marginal_index).
ThetaBatch prior_sample(const PriorSpec& prior, RngKey key, Eigen::Index n);

/// Row-wise sum of marginal log densities; -inf for out-of-support rows.
Vector prior_log_prob(const PriorSpec& prior, const ThetaBatch& theta);

}  // namespace sbi
