#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "sbi/core/prior.hpp"
#include "sbi/core/rng.hpp"
#include "sbi/core/types.hpp"

namespace sbi {

/// Paired simulations: row i of `y` was generated from row i of `theta`.
struct Dataset {
  Matrix y;
  ThetaBatch theta;

  [[nodiscard]] Eigen::Index rows() const noexcept { return y.rows(); }
  /// Throws ContractError if y and theta disagree on the row count.
  void validate() const;
  [[nodiscard]] Dataset select_rows(std::span<const Eigen::Index> rows) const;
  [[nodiscard]] Dataset middle_rows(Eigen::Index start, Eigen::Index count) const;
};

/// Row-wise concatenation, `a` first. With `a` absent returns `b`.
Dataset stack_data(const std::optional<Dataset>& a, const Dataset& b);

/// Random disjoint partition into (train, validation); the validation part
/// has round(fraction * n) rows, at least one.
std::pair<Dataset, Dataset> split_train_val(const Dataset& d, double fraction, RngKey key);

/// Removes rows with a non-finite entry in y or theta. Returns the number of
/// dropped rows and logs a warning when it is nonzero.
std::size_t drop_nonfinite(Dataset& d);

/// Random permutation of 0..n-1 (Fisher-Yates driven by `key`).
std::vector<Eigen::Index> permutation(RngKey key, Eigen::Index n);

/// Shortest round-trip decimal form of x.
std::string format_double(double x);

/// Comma-separated fields of one line (no quoting).
std::vector<std::string> split_csv_fields(const std::string& line);
/// Accepts the format_double output plus inf/nan spellings. Throws ConfigError.
double parse_csv_double(const std::string& s);

/// Header `y_0..y_{d-1},<name>_0..`, one row per simulation.
void write_dataset_csv(std::ostream& out, const Dataset& d);
void write_dataset_csv(const std::string& path, const Dataset& d);
/// Parameter blocks are recovered from the header by stripping the trailing
/// `_<index>`. Throws ConfigError on malformed input.
Dataset read_dataset_csv(std::istream& in);
Dataset read_dataset_csv(const std::string& path);

}  // namespace sbi
