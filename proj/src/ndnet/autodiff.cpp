#include "sbi/ndnet/autodiff.hpp"

#include <cassert>
#include <cmath>
#include <numbers>

#include "sbi/core/errors.hpp"

namespace sbi::nn {

using detail::Node;

Var::Var(Tensor value) : node_(std::make_shared<Node>()) { node_->value = std::move(value); }

const Tensor& Var::value() const {
  if (!node_) throw ContractError("use of an undefined Var");
  return node_->value;
}

Tensor Var::grad() const {
  const auto& v = value();
  if (node_->grad.size() == 0) return Tensor::Zero(v.rows(), v.cols());
  return node_->grad;
}

double Var::item() const {
  const auto& v = value();
  if (v.size() != 1) throw ContractError("Var::item on a non-scalar");
  return v(0, 0);
}

Var Tape::leaf(Tensor value) {
  Var v(std::move(value));
  v.tape_ = this;
  nodes_.push_back(v.node_);
  return v;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw ContractError("Tape::backward: loss is not recorded on this tape");
  if (loss.value().size() != 1) throw ContractError("Tape::backward: loss must be a scalar");
  loss.node_->grad = Tensor::Ones(1, 1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& n = **it;
    if (n.backward && n.grad.size() != 0) n.backward();
  }
}

struct OpBuilder {
  static Tape* common_tape(std::initializer_list<const Var*> parents) {
    Tape* tape = nullptr;
    for (const Var* p : parents) {
      if (!p->tape_) continue;
      if (tape && tape != p->tape_) throw ContractError("operands recorded on different tapes");
      tape = p->tape_;
    }
    return tape;
  }

  // `fn(g)` receives the output gradient and pushes contributions into
  // parents through `accumulate`.
  template <class F>
  static Var make(Tensor value, std::initializer_list<const Var*> parents, F fn) {
#ifndef NDEBUG
    assert(value.allFinite() || !"non-finite tensor produced by an op");
#endif
    Tape* tape = common_tape(parents);
    Var out(std::move(value));
    if (!tape) return out;
    out.tape_ = tape;
    Node* self = out.node_.get();
    out.node_->backward = [self, fn = std::move(fn)]() { fn(self->grad); };
    tape->nodes_.push_back(out.node_);
    return out;
  }

  template <class Expr>
  static void accumulate(const Var& p, const Expr& g) {
    if (!p.tape_) return;
    Tensor& dst = p.node_->grad;
    if (dst.size() == 0)
      dst = g;
    else
      dst += g;
  }

  static const Tensor& val(const Var& v) { return v.value(); }
};

namespace {

using B = OpBuilder;

void same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ContractError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()) +
                        ")");
}

}  // namespace

Var operator+(const Var& a, const Var& b) {
  same_shape(a, b, "add");
  return B::make(a.value() + b.value(), {&a, &b}, [a, b](const Tensor& g) {
    B::accumulate(a, g);
    B::accumulate(b, g);
  });
}

Var operator-(const Var& a, const Var& b) {
  same_shape(a, b, "sub");
  return B::make(a.value() - b.value(), {&a, &b}, [a, b](const Tensor& g) {
    B::accumulate(a, g);
    B::accumulate(b, -g);
  });
}

Var operator*(const Var& a, const Var& b) {
  same_shape(a, b, "mul");
  return B::make(a.value().cwiseProduct(b.value()), {&a, &b}, [a, b](const Tensor& g) {
    if (a.requires_grad()) B::accumulate(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) B::accumulate(b, g.cwiseProduct(a.value()));
  });
}

Var operator-(const Var& a) {
  return B::make(-a.value(), {&a}, [a](const Tensor& g) { B::accumulate(a, -g); });
}

Var operator*(const Var& a, double s) {
  return B::make(a.value() * s, {&a}, [a, s](const Tensor& g) { B::accumulate(a, g * s); });
}

Var operator*(double s, const Var& a) { return a * s; }

Var operator+(const Var& a, double s) {
  return B::make((a.value().array() + s).matrix(), {&a}, [a](const Tensor& g) { B::accumulate(a, g); });
}

Var operator-(const Var& a, double s) { return a + (-s); }

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows())
    throw ContractError("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()) + ")");
  return B::make(a.value() * b.value(), {&a, &b}, [a, b](const Tensor& g) {
    if (a.requires_grad()) B::accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) B::accumulate(b, a.value().transpose() * g);
  });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ContractError("add_row: row must be 1 x cols(a)");
  Tensor out = a.value();
  out.rowwise() += row.value().row(0);
  return B::make(std::move(out), {&a, &row}, [a, row](const Tensor& g) {
    B::accumulate(a, g);
    if (row.requires_grad()) B::accumulate(row, g.colwise().sum());
  });
}

Var mul_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw ContractError("mul_col: column must be rows(a) x 1");
  Tensor out = a.value().array().colwise() * col.value().col(0).array();
  return B::make(std::move(out), {&a, &col}, [a, col](const Tensor& g) {
    if (a.requires_grad()) B::accumulate(a, (g.array().colwise() * col.value().col(0).array()).matrix());
    if (col.requires_grad()) B::accumulate(col, g.cwiseProduct(a.value()).rowwise().sum());
  });
}

Var add_col(const Var& a, const Var& col) {
  if (col.cols() != 1 || col.rows() != a.rows()) throw ContractError("add_col: column must be rows(a) x 1");
  Tensor out = a.value();
  out.colwise() += col.value().col(0);
  return B::make(std::move(out), {&a, &col}, [a, col](const Tensor& g) {
    B::accumulate(a, g);
    if (col.requires_grad()) B::accumulate(col, g.rowwise().sum());
  });
}

Var tanh(const Var& a) {
  Tensor out = a.value().array().tanh().matrix();
  return B::make(out, {&a}, [a, out](const Tensor& g) {
    B::accumulate(a, (g.array() * (1.0 - out.array().square())).matrix());
  });
}

Var relu(const Var& a) {
  return B::make(a.value().cwiseMax(0.0), {&a}, [a](const Tensor& g) {
    B::accumulate(a, (a.value().array() > 0.0).select(g, 0.0).matrix());
  });
}

Var gelu(const Var& a) {
  const Tensor& x = a.value();
  const Tensor cdf = x.unaryExpr([](double v) { return 0.5 * std::erfc(-v / std::numbers::sqrt2); });
  return B::make(x.cwiseProduct(cdf), {&a}, [a, cdf](const Tensor& g) {
    const auto& xv = a.value().array();
    const auto pdf = (-0.5 * xv.square()).exp() * (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    B::accumulate(a, (g.array() * (cdf.array() + xv * pdf)).matrix());
  });
}

Var exp(const Var& a) {
  Tensor out = a.value().array().exp().matrix();
  return B::make(out, {&a}, [a, out](const Tensor& g) { B::accumulate(a, g.cwiseProduct(out)); });
}

Var log(const Var& a) {
  return B::make(a.value().array().log().matrix(), {&a}, [a](const Tensor& g) {
    B::accumulate(a, (g.array() / a.value().array()).matrix());
  });
}

Var square(const Var& a) {
  return B::make(a.value().array().square().matrix(), {&a}, [a](const Tensor& g) {
    B::accumulate(a, (2.0 * g.array() * a.value().array()).matrix());
  });
}

Var clamp(const Var& a, double lo, double hi) {
  return B::make(a.value().cwiseMax(lo).cwiseMin(hi), {&a}, [a, lo, hi](const Tensor& g) {
    const auto& x = a.value().array();
    B::accumulate(a, ((x >= lo) && (x <= hi)).select(g, 0.0).matrix());
  });
}

Var sum(const Var& a) {
  return B::make(Tensor::Constant(1, 1, a.value().sum()), {&a}, [a](const Tensor& g) {
    B::accumulate(a, Tensor::Constant(a.rows(), a.cols(), g(0, 0)));
  });
}

Var mean(const Var& a) {
  const auto n = static_cast<double>(a.value().size());
  if (n == 0) throw ContractError("mean of an empty tensor");
  return sum(a) * (1.0 / n);
}

Var row_sum(const Var& a) {
  return B::make(a.value().rowwise().sum(), {&a}, [a](const Tensor& g) {
    Tensor d(a.rows(), a.cols());
    d.colwise() = g.col(0);
    B::accumulate(a, d);
  });
}

Var logsumexp_rows(const Var& a) {
  const Tensor& x = a.value();
  if (x.cols() == 0) throw ContractError("logsumexp_rows: no columns");
  const Vector m = x.rowwise().maxCoeff();
  Tensor shifted = x;
  shifted.colwise() -= m;
  Tensor soft = shifted.array().exp().matrix();
  const Vector s = soft.rowwise().sum();
  soft.array().colwise() /= s.array();
  Tensor out = (m.array() + s.array().log()).matrix();
  return B::make(std::move(out), {&a}, [a, soft](const Tensor& g) {
    B::accumulate(a, (soft.array().colwise() * g.col(0).array()).matrix());
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: nothing to concatenate");
  const Eigen::Index n = parts.front().rows();
  Eigen::Index total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw ContractError("concat_cols: row counts differ");
    total += p.cols();
  }
  Tensor out(n, total);
  Eigen::Index off = 0;
  Tape* tape = nullptr;
  for (const auto& p : parts) {
    out.middleCols(off, p.cols()) = p.value();
    off += p.cols();
    if (p.tape()) {
      if (tape && tape != p.tape()) throw ContractError("operands recorded on different tapes");
      tape = p.tape();
    }
  }
  std::vector<Var> kept(parts.begin(), parts.end());
  // Route the tape through the first recorded part so make() sees it.
  const Var* anchor = &parts.front();
  for (const auto& p : parts)
    if (p.tape()) {
      anchor = &p;
      break;
    }
  return B::make(std::move(out), {anchor}, [kept](const Tensor& g) {
    Eigen::Index o = 0;
    for (const auto& p : kept) {
      if (p.requires_grad()) B::accumulate(p, g.middleCols(o, p.cols()));
      o += p.cols();
    }
  });
}

Var concat_cols(std::initializer_list<Var> parts) {
  return concat_cols(std::span<const Var>(parts.begin(), parts.size()));
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ContractError("slice_cols: range out of bounds");
  return B::make(a.value().middleCols(start, count), {&a}, [a, start, count](const Tensor& g) {
    Tensor d = Tensor::Zero(a.rows(), a.cols());
    d.middleCols(start, count) = g;
    B::accumulate(a, d);
  });
}

Var permute_cols(const Var& a, std::span<const int> perm) {
  if (static_cast<Eigen::Index>(perm.size()) != a.cols()) throw ContractError("permute_cols: size mismatch");
  Tensor out(a.rows(), a.cols());
  for (std::size_t j = 0; j < perm.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = a.value().col(perm[j]);
  std::vector<int> p(perm.begin(), perm.end());
  return B::make(std::move(out), {&a}, [a, p](const Tensor& g) {
    Tensor d(a.rows(), a.cols());
    for (std::size_t j = 0; j < p.size(); ++j) d.col(p[j]) = g.col(static_cast<Eigen::Index>(j));
    B::accumulate(a, d);
  });
}

Var blocks_to_cols(const Var& a, Eigen::Index m) {
  if (a.cols() != 1 || m < 1 || a.rows() % m != 0) throw ContractError("blocks_to_cols: expected (m*n) x 1");
  const Eigen::Index n = a.rows() / m;
  Tensor out(n, m);
  for (Eigen::Index j = 0; j < m; ++j) out.col(j) = a.value().block(j * n, 0, n, 1);
  return B::make(std::move(out), {&a}, [a, n, m](const Tensor& g) {
    Tensor d(n * m, 1);
    for (Eigen::Index j = 0; j < m; ++j) d.block(j * n, 0, n, 1) = g.col(j);
    B::accumulate(a, d);
  });
}

VarParams as_constants(const NetParams& params) {
  VarParams out;
  for (const auto& [k, v] : params) out.emplace(k, Var(v));
  return out;
}

VarParams as_leaves(Tape& tape, const NetParams& params) {
  VarParams out;
  for (const auto& [k, v] : params) out.emplace(k, tape.leaf(v));
  return out;
}

NetParams grads_of(const VarParams& leaves) {
  NetParams out;
  for (const auto& [k, v] : leaves) out.emplace(k, v.grad());
  return out;
}

std::pair<double, NetParams> value_and_grad(const LossFn& loss, const NetParams& params) {
  Tape tape;
  const auto leaves = as_leaves(tape, params);
  const Var l = loss(leaves);
  if (l.value().size() != 1) throw ContractError("value_and_grad: loss must be a scalar");
  if (l.requires_grad()) tape.backward(l);
  return {l.item(), grads_of(leaves)};
}

NetParams grad(const LossFn& loss, const NetParams& params) { return value_and_grad(loss, params).second; }

const Var& param(const VarParams& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw ContractError("missing network parameter '" + name + "'");
  return it->second;
}

const Tensor& param(const NetParams& params, const std::string& name) {
  const auto it = params.find(name);
  if (it == params.end()) throw ContractError("missing network parameter '" + name + "'");
  return it->second;
}

}  // namespace sbi::nn
