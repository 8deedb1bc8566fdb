#include <algorithm>
#include <cmath>
#include <ostream>

#include "sbi/cli/cli.hpp"
#include "sbi/core/dataset.hpp"
#include "sbi/core/errors.hpp"
#include "sbi/mcmc/diagnostics.hpp"

namespace sbi::cli {

namespace {

struct Bins {
  double lo = 0.0;
  double width = 1.0;
  int n = 1;

  Bins(double min, double max, int n_bins) : lo(min), n(n_bins) {
    // A constant column still gets one unit-wide range.
    width = max > min ? (max - min) / n_bins : 1.0 / n_bins;
    if (!(max > min)) lo = min - 0.5;
  }
  [[nodiscard]] int index(double x) const {
    return std::clamp(static_cast<int>(std::floor((x - lo) / width)), 0, n - 1);
  }
  [[nodiscard]] double edge(int i) const { return lo + width * i; }
};

Bins bins_for(const Matrix& draws, Eigen::Index col, int n_bins) {
  return {draws.col(col).minCoeff(), draws.col(col).maxCoeff(), n_bins};
}

std::string csv_number(double x) { return std::isfinite(x) ? format_double(x) : (std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf")); }

void marginal_hist(const mcmc::ChainSet& c, std::ostream& out, int n_bins) {
  const Matrix d = c.pooled();
  const auto labels = c.layout.column_labels();
  out << "parameter,bin,lo,hi,count\n";
  for (Eigen::Index j = 0; j < d.cols(); ++j) {
    const Bins b = bins_for(d, j, n_bins);
    std::vector<long> counts(static_cast<std::size_t>(n_bins), 0);
    for (Eigen::Index i = 0; i < d.rows(); ++i) ++counts[static_cast<std::size_t>(b.index(d(i, j)))];
    for (int k = 0; k < n_bins; ++k)
      out << labels[static_cast<std::size_t>(j)] << ',' << k << ',' << format_double(b.edge(k)) << ','
          << format_double(b.edge(k + 1)) << ',' << counts[static_cast<std::size_t>(k)] << '\n';
  }
}

void pair_grid(const mcmc::ChainSet& c, std::ostream& out, int n_bins) {
  const Matrix d = c.pooled();
  const auto labels = c.layout.column_labels();
  out << "param_x,param_y,bin_x,bin_y,x_lo,x_hi,y_lo,y_hi,count\n";
  for (Eigen::Index a = 0; a < d.cols(); ++a) {
    for (Eigen::Index b = a + 1; b < d.cols(); ++b) {
      const Bins bx = bins_for(d, a, n_bins);
      const Bins by = bins_for(d, b, n_bins);
      std::vector<long> counts(static_cast<std::size_t>(n_bins * n_bins), 0);
      for (Eigen::Index i = 0; i < d.rows(); ++i)
        ++counts[static_cast<std::size_t>(bx.index(d(i, a)) * n_bins + by.index(d(i, b)))];
      for (int x = 0; x < n_bins; ++x)
        for (int y = 0; y < n_bins; ++y)
          out << labels[static_cast<std::size_t>(a)] << ',' << labels[static_cast<std::size_t>(b)] << ',' << x << ','
              << y << ',' << format_double(bx.edge(x)) << ',' << format_double(bx.edge(x + 1)) << ','
              << format_double(by.edge(y)) << ',' << format_double(by.edge(y + 1)) << ','
              << counts[static_cast<std::size_t>(x * n_bins + y)] << '\n';
    }
  }
}

void rank_table(const mcmc::ChainSet& c, std::ostream& out, int n_bins) {
  const auto labels = c.layout.column_labels();
  out << "parameter,chain,bin,count\n";
  for (int j = 0; j < c.dim(); ++j) {
    const Eigen::MatrixXi r = mcmc::rank_stats(c.coordinate(j), n_bins);
    for (Eigen::Index ch = 0; ch < r.rows(); ++ch)
      for (Eigen::Index k = 0; k < r.cols(); ++k)
        out << labels[static_cast<std::size_t>(j)] << ',' << ch << ',' << k << ',' << r(ch, k) << '\n';
  }
}

void ess_evolution(const mcmc::ChainSet& c, std::ostream& out, int n_points) {
  const auto labels = c.layout.column_labels();
  out << "parameter,n_draws,ess_bulk,ess_tail\n";
  const Eigen::Index n = c.n_draws();
  for (int j = 0; j < c.dim(); ++j) {
    const Matrix all = c.coordinate(j);
    for (int p = 1; p <= n_points; ++p) {
      const Eigen::Index m = n * p / n_points;
      if (m < 4) continue;
      const Matrix head = all.topRows(m);
      out << labels[static_cast<std::size_t>(j)] << ',' << m * all.cols() << ',' << csv_number(mcmc::ess_bulk(head))
          << ',' << csv_number(mcmc::ess_tail(head)) << '\n';
    }
  }
}

void rhat_ress(const mcmc::ChainSet& c, std::ostream& out) {
  const auto labels = c.layout.column_labels();
  const auto d = mcmc::diagnose(c);
  const auto rok = d.rhat_ok();
  const auto eok = d.ess_ok();
  out << "parameter,split_rhat,rel_ess,rhat_ok,rel_ess_ok\n";
  for (std::size_t j = 0; j < labels.size(); ++j)
    out << labels[j] << ',' << csv_number(d.split_rhat[j]) << ',' << csv_number(d.rel_ess[j]) << ',' << (rok[j] ? 1 : 0)
        << ',' << (eok[j] ? 1 : 0) << '\n';
}

}  // namespace

void write_plot_data(const mcmc::ChainSet& chains, const std::string& kind, std::ostream& out, int n_bins) {
  chains.validate();
  if (n_bins < 1) throw ConfigError("plotdata: bins must be >= 1");
  if (kind == "marginal-hist") return marginal_hist(chains, out, n_bins);
  if (kind == "pair-grid") return pair_grid(chains, out, n_bins);
  if (kind == "rank") return rank_table(chains, out, n_bins);
  if (kind == "ess-evolution") return ess_evolution(chains, out, n_bins);
  if (kind == "rhat-ress") return rhat_ress(chains, out);
  throw ConfigError("unknown plot kind '" + kind + "' (expected marginal-hist, pair-grid, rank, ess-evolution or rhat-ress)");
}

}  // namespace sbi::cli
