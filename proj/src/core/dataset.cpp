#include "sbi/core/dataset.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <vector>

#include <spdlog/spdlog.h>

#include "sbi/core/errors.hpp"

namespace sbi {

void Dataset::validate() const {
  if (!theta.empty() && theta.rows() != y.rows())
    throw ContractError("Dataset: y has " + std::to_string(y.rows()) + " rows but theta has " +
                        std::to_string(theta.rows()));
}

Dataset Dataset::select_rows(std::span<const Eigen::Index> rows) const {
  Dataset out;
  out.y.resize(static_cast<Eigen::Index>(rows.size()), y.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.y.row(static_cast<Eigen::Index>(i)) = y.row(rows[i]);
  out.theta = theta.select_rows(rows);
  return out;
}

Dataset Dataset::middle_rows(Eigen::Index start, Eigen::Index count) const {
  return Dataset{y.middleRows(start, count), theta.middle_rows(start, count)};
}

Dataset stack_data(const std::optional<Dataset>& a, const Dataset& b) {
  b.validate();
  if (!a) return b;
  a->validate();
  if (a->y.cols() != b.y.cols()) throw ContractError("stack_data: y widths differ");
  if (a->theta.layout() != b.theta.layout()) throw ContractError("stack_data: theta layouts differ");
  Dataset out;
  out.y.resize(a->rows() + b.rows(), b.y.cols());
  out.y.topRows(a->rows()) = a->y;
  out.y.bottomRows(b.rows()) = b.y;
  for (std::size_t i = 0; i < b.theta.entries().size(); ++i) {
    const auto& ma = a->theta.entries()[i].second;
    const auto& mb = b.theta.entries()[i].second;
    Matrix m(ma.rows() + mb.rows(), mb.cols());
    m.topRows(ma.rows()) = ma;
    m.bottomRows(mb.rows()) = mb;
    out.theta.add(b.theta.entries()[i].first, std::move(m));
  }
  return out;
}

std::vector<Eigen::Index> permutation(RngKey key, Eigen::Index n) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Generator gen(key);
  for (Eigen::Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Eigen::Index>(gen.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& d, double fraction, RngKey key) {
  d.validate();
  if (!(fraction > 0.0 && fraction < 1.0)) throw ContractError("split_train_val: fraction must lie in (0, 1)");
  const Eigen::Index n = d.rows();
  if (n < 2) throw ContractError("split_train_val: need at least 2 rows, got " + std::to_string(n));
  auto n_val = static_cast<Eigen::Index>(std::llround(fraction * static_cast<double>(n)));
  n_val = std::clamp<Eigen::Index>(n_val, 1, n - 1);
  const auto perm = permutation(key, n);
  const std::span<const Eigen::Index> all(perm);
  return {d.select_rows(all.subspan(static_cast<std::size_t>(n_val))),
          d.select_rows(all.first(static_cast<std::size_t>(n_val)))};
}

std::size_t drop_nonfinite(Dataset& d) {
  d.validate();
  const Matrix flat = d.theta.empty() ? Matrix(d.rows(), 0) : d.theta.flatten();
  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(d.rows()));
  for (Eigen::Index i = 0; i < d.rows(); ++i)
    if (d.y.row(i).allFinite() && flat.row(i).allFinite()) keep.push_back(i);
  const std::size_t dropped = static_cast<std::size_t>(d.rows()) - keep.size();
  if (dropped > 0) {
    spdlog::warn("dropped {} of {} simulations with non-finite entries", dropped, d.rows());
    d = d.select_rows(keep);
  }
  return dropped;
}

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

void write_dataset_csv(std::ostream& out, const Dataset& d) {
  d.validate();
  std::string line;
  for (Eigen::Index j = 0; j < d.y.cols(); ++j) {
    if (j) line += ',';
    line += "y_" + std::to_string(j);
  }
  for (const auto& label : d.theta.layout().column_labels()) line += "," + label;
  out << line << '\n';
  const Matrix flat = d.theta.empty() ? Matrix(d.rows(), 0) : d.theta.flatten();
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    line.clear();
    for (Eigen::Index j = 0; j < d.y.cols(); ++j) {
      if (j) line += ',';
      line += format_double(d.y(i, j));
    }
    for (Eigen::Index j = 0; j < flat.cols(); ++j) line += "," + format_double(flat(i, j));
    out << line << '\n';
  }
}

void write_dataset_csv(const std::string& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  write_dataset_csv(out, d);
}

std::vector<std::string> split_csv_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_csv_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  while (first != last && *first == ' ') ++first;
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) {
    // from_chars rejects "inf"/"nan" spellings on some platforms
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan" || s == "-nan") return std::numeric_limits<double>::quiet_NaN();
    throw ConfigError("malformed number '" + s + "'");
  }
  return v;
}

Dataset read_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("dataset CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_fields(line);
  int y_dim = 0;
  ParamLayout layout;
  for (std::size_t j = 0; j < header.size(); ++j) {
    const auto& h = header[j];
    const auto us = h.rfind('_');
    if (us == std::string::npos || us + 1 == h.size()) throw ConfigError("malformed CSV column '" + h + "'");
    const std::string name = h.substr(0, us);
    const std::string index = h.substr(us + 1);
    if (name == "y" && layout.names.empty()) {
      if (index != std::to_string(y_dim)) throw ConfigError("y columns out of order at '" + h + "'");
      ++y_dim;
      continue;
    }
    if (layout.names.empty() || layout.names.back() != name) {
      layout.names.push_back(name);
      layout.dims.push_back(0);
    }
    if (index != std::to_string(layout.dims.back())) throw ConfigError("theta columns out of order at '" + h + "'");
    ++layout.dims.back();
  }
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_fields(line);
    if (fields.size() != header.size())
      throw ConfigError("CSV line " + std::to_string(lineno) + " has " + std::to_string(fields.size()) +
                        " fields, expected " + std::to_string(header.size()));
    std::vector<double> row;
    row.reserve(fields.size());
    for (const auto& f : fields) row.push_back(parse_csv_double(f));
    rows.push_back(std::move(row));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  Matrix all(n, static_cast<Eigen::Index>(header.size()));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < all.cols(); ++j) all(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  Dataset d;
  d.y = all.leftCols(y_dim);
  d.theta = ThetaBatch::unflatten(layout, all.rightCols(all.cols() - y_dim));
  return d;
}

Dataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open dataset '" + path + "'");
  return read_dataset_csv(in);
}

}  // namespace sbi
