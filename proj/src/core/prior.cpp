#include "sbi/core/prior.hpp"

#include <algorithm>
#include <limits>

#include "sbi/core/errors.hpp"

namespace sbi {

int ParamLayout::total_dim() const noexcept {
  int total = 0;
  for (int d : dims) total += d;
  return total;
}

int ParamLayout::offset(std::size_t block) const {
  if (block > dims.size()) throw ContractError("ParamLayout::offset: block out of range");
  int off = 0;
  for (std::size_t i = 0; i < block; ++i) off += dims[i];
  return off;
}

std::vector<std::string> ParamLayout::column_labels() const {
  std::vector<std::string> labels;
  for (std::size_t b = 0; b < names.size(); ++b)
    for (int i = 0; i < dims[b]; ++i) labels.push_back(names[b] + "_" + std::to_string(i));
  return labels;
}

void ThetaBatch::add(std::string name, Matrix values) {
  for (const auto& [existing, _] : entries_)
    if (existing == name) throw ContractError("ThetaBatch: duplicate parameter name '" + name + "'");
  if (!entries_.empty() && values.rows() != rows())
    throw ContractError("ThetaBatch: block '" + name + "' has " + std::to_string(values.rows()) + " rows, expected " +
                        std::to_string(rows()));
  entries_.emplace_back(std::move(name), std::move(values));
}

Eigen::Index ThetaBatch::rows() const noexcept { return entries_.empty() ? 0 : entries_.front().second.rows(); }

const Matrix& ThetaBatch::at(std::string_view name) const {
  for (const auto& [n, m] : entries_)
    if (n == name) return m;
  throw ContractError("ThetaBatch: no parameter named '" + std::string(name) + "'");
}

ParamLayout ThetaBatch::layout() const {
  ParamLayout layout;
  for (const auto& [n, m] : entries_) {
    layout.names.push_back(n);
    layout.dims.push_back(static_cast<int>(m.cols()));
  }
  return layout;
}

Matrix ThetaBatch::flatten() const {
  const auto layout = this->layout();
  Matrix flat(rows(), layout.total_dim());
  Eigen::Index col = 0;
  for (const auto& [_, m] : entries_) {
    flat.middleCols(col, m.cols()) = m;
    col += m.cols();
  }
  return flat;
}

ThetaBatch ThetaBatch::unflatten(const ParamLayout& layout, const Matrix& flat) {
  if (flat.cols() != layout.total_dim())
    throw ContractError("ThetaBatch::unflatten: expected " + std::to_string(layout.total_dim()) + " columns, got " +
                        std::to_string(flat.cols()));
  ThetaBatch out;
  Eigen::Index col = 0;
  for (std::size_t b = 0; b < layout.names.size(); ++b) {
    out.add(layout.names[b], flat.middleCols(col, layout.dims[b]));
    col += layout.dims[b];
  }
  return out;
}

ThetaBatch ThetaBatch::select_rows(std::span<const Eigen::Index> rows) const {
  ThetaBatch out;
  for (const auto& [n, m] : entries_) {
    Matrix sub(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) sub.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    out.add(n, std::move(sub));
  }
  return out;
}

ThetaBatch ThetaBatch::middle_rows(Eigen::Index start, Eigen::Index count) const {
  ThetaBatch out;
  for (const auto& [n, m] : entries_) out.add(n, m.middleRows(start, count));
  return out;
}

PriorSpec& PriorSpec::add(std::string name, Distribution dist) {
  for (const auto& [existing, _] : marginals_)
    if (existing == name) throw ConfigError("PriorSpec: duplicate parameter name '" + name + "'");
  total_dim_ += dist.dim();
  marginals_.emplace_back(std::move(name), std::move(dist));
  return *this;
}

ParamLayout PriorSpec::layout() const {
  ParamLayout layout;
  for (const auto& [n, d] : marginals_) {
    layout.names.push_back(n);
    layout.dims.push_back(d.dim());
  }
  return layout;
}

Support PriorSpec::support(int flat_coord) const {
  int off = 0;
  for (const auto& [_, d] : marginals_) {
    if (flat_coord < off + d.dim()) return d.support(flat_coord - off);
    off += d.dim();
  }
  throw ContractError("PriorSpec::support: coordinate out of range");
}

double PriorSpec::log_prob_flat(std::span<const double> theta) const {
  if (static_cast<int>(theta.size()) != total_dim_) throw ContractError("PriorSpec::log_prob_flat: size mismatch");
  double lp = 0.0;
  std::size_t off = 0;
  for (const auto& [_, d] : marginals_) {
    const auto dim = static_cast<std::size_t>(d.dim());
    lp += d.log_prob(theta.subspan(off, dim));
    if (lp == -std::numeric_limits<double>::infinity()) return lp;
    off += dim;
  }
  return lp;
}

ThetaBatch prior_sample(const PriorSpec& prior, RngKey key, Eigen::Index n) {
  if (n < 1) throw ContractError("prior_sample: n must be >= 1");
  ThetaBatch out;
  std::uint64_t idx = 0;
  for (const auto& [name, dist] : prior.marginals()) {
    Generator gen(fold_in(key, idx++));
    out.add(name, dist.sample(gen, n));
  }
  return out;
}

Vector prior_log_prob(const PriorSpec& prior, const ThetaBatch& theta) {
  const auto& entries = theta.entries();
  const auto& marginals = prior.marginals();
  if (entries.size() != marginals.size())
    throw ContractError("prior_log_prob: expected " + std::to_string(marginals.size()) + " parameter blocks, got " +
                        std::to_string(entries.size()));
  Vector lp = Vector::Zero(theta.rows());
  for (std::size_t b = 0; b < marginals.size(); ++b) {
    if (entries[b].first != marginals[b].first)
      throw ContractError("prior_log_prob: parameter '" + entries[b].first + "' does not match prior name '" +
                          marginals[b].first + "'");
    if (entries[b].second.cols() != marginals[b].second.dim())
      throw ContractError("prior_log_prob: parameter '" + entries[b].first + "' has wrong width");
    lp += marginals[b].second.log_prob(entries[b].second);
  }
  return lp;
}

}  // namespace sbi
