#include "sbi/mcmc/chains.hpp"

#include <fstream>
#include <istream>
#include <ostream>

#include "sbi/core/dataset.hpp"
#include "sbi/core/errors.hpp"

namespace sbi::mcmc {

void ChainSet::validate() const {
  if (chains.empty()) throw ContractError("ChainSet: no chains");
  for (const auto& c : chains) {
    if (c.rows() != n_draws()) throw ContractError("ChainSet: chains have different lengths");
    if (c.cols() != dim()) throw ContractError("ChainSet: chain width disagrees with the layout");
    if (!c.allFinite()) throw ContractError("ChainSet: non-finite draw");
  }
}

Matrix ChainSet::coordinate(int col) const {
  if (col < 0 || col >= dim()) throw ContractError("ChainSet: coordinate out of range");
  Matrix out(n_draws(), n_chains());
  for (int c = 0; c < n_chains(); ++c) out.col(c) = chains[static_cast<std::size_t>(c)].col(col);
  return out;
}

Matrix ChainSet::pooled() const {
  Matrix out(n_draws() * n_chains(), dim());
  for (int c = 0; c < n_chains(); ++c) out.middleRows(c * n_draws(), n_draws()) = chains[static_cast<std::size_t>(c)];
  return out;
}

ThetaBatch ChainSet::pooled_theta() const { return ThetaBatch::unflatten(layout, pooled()); }

void write_chainset_csv(std::ostream& out, const ChainSet& c) {
  out << "chain,draw";
  for (const auto& label : c.layout.column_labels()) out << ',' << label;
  out << '\n';
  for (int k = 0; k < c.n_chains(); ++k) {
    const Matrix& m = c.chains[static_cast<std::size_t>(k)];
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      out << k << ',' << i;
      for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << format_double(m(i, j));
      out << '\n';
    }
  }
}

void write_chainset_csv(const std::string& path, const ChainSet& c) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  write_chainset_csv(out, c);
}

ChainSet read_chainset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("chain CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_csv_fields(line);
  if (header.size() < 2 || header[0] != "chain" || header[1] != "draw")
    throw ConfigError("chain CSV must start with 'chain,draw'");
  ChainSet cs;
  for (std::size_t j = 2; j < header.size(); ++j) {
    const auto& h = header[j];
    const auto us = h.rfind('_');
    if (us == std::string::npos || us + 1 == h.size()) throw ConfigError("malformed CSV column '" + h + "'");
    const std::string name = h.substr(0, us);
    if (cs.layout.names.empty() || cs.layout.names.back() != name) {
      cs.layout.names.push_back(name);
      cs.layout.dims.push_back(0);
    }
    if (h.substr(us + 1) != std::to_string(cs.layout.dims.back()))
      throw ConfigError("columns out of order at '" + h + "'");
    ++cs.layout.dims.back();
  }
  std::vector<std::vector<std::vector<double>>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_fields(line);
    if (fields.size() != header.size()) throw ConfigError("chain CSV row has the wrong number of fields");
    const auto chain = static_cast<std::size_t>(parse_csv_double(fields[0]));
    const auto draw = static_cast<std::size_t>(parse_csv_double(fields[1]));
    if (chain > rows.size()) throw ConfigError("chain CSV rows out of order");
    if (chain == rows.size()) rows.emplace_back();
    if (draw != rows[chain].size()) throw ConfigError("chain CSV rows out of order");
    std::vector<double> v;
    for (std::size_t j = 2; j < fields.size(); ++j) v.push_back(parse_csv_double(fields[j]));
    rows[chain].push_back(std::move(v));
  }
  for (const auto& chain : rows) {
    Matrix m(static_cast<Eigen::Index>(chain.size()), static_cast<Eigen::Index>(header.size() - 2));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = chain[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    cs.chains.push_back(std::move(m));
  }
  cs.validate();
  return cs;
}

ChainSet read_chainset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  return read_chainset_csv(in);
}

}  // namespace sbi::mcmc
