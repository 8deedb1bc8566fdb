#include "sbi/ndnet/optim.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <limits>

#include "sbi/core/dataset.hpp"
#include "sbi/core/errors.hpp"

namespace sbi::nn {

AdamState adam_init(const NetParams& params, AdamConfig cfg) {
  AdamState s;
  s.cfg = cfg;
  for (const auto& [k, v] : params) {
    s.m.emplace(k, Tensor::Zero(v.rows(), v.cols()));
    s.v.emplace(k, Tensor::Zero(v.rows(), v.cols()));
  }
  return s;
}

std::pair<AdamState, NetParams> adam_step(AdamState state, NetParams params, const NetParams& grads) {
  if (grads.size() != params.size()) throw ContractError("adam_step: gradient tree does not match params");
  const auto& c = state.cfg;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const auto git = grads.find(name);
    const auto mit = state.m.find(name);
    const auto vit = state.v.find(name);
    if (git == grads.end() || mit == state.m.end() || vit == state.v.end())
      throw ContractError("adam_step: missing entry for '" + name + "'");
    const Tensor& g = git->second;
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw ContractError("adam_step: shape mismatch for '" + name + "'");
    Tensor& m = mit->second;
    Tensor& v = vit->second;
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    p.array() -= c.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps);
  }
  return {std::move(state), std::move(params)};
}

FitResult fit_loop(const Objective& objective, NetParams init, const Dataset& data, RngKey key, const FitConfig& cfg) {
  if (data.rows() == 0) throw ContractError("fit_loop: empty dataset");
  auto [train, val] = split_train_val(data, cfg.val_fraction, fold_in(key, 0));
  return fit_loop(objective, std::move(init), train, val, key, cfg);
}

FitResult fit_loop(const Objective& objective, NetParams init, const Dataset& train, const Dataset& val, RngKey key,
                   const FitConfig& cfg) {
  if (train.rows() == 0 || val.rows() == 0) throw ContractError("fit_loop: empty dataset");
  if (cfg.batch_size < 1) throw ContractError("fit_loop: batch_size must be >= 1");
  if (cfg.n_iter < 1) throw ContractError("fit_loop: n_iter must be >= 1");
  if (cfg.patience < 0) throw ContractError("fit_loop: patience must be >= 0");

  const Eigen::Index n = train.rows();
  const Eigen::Index bs = std::min<Eigen::Index>(cfg.batch_size, n);
  const Eigen::Index n_batches = std::max<Eigen::Index>(1, n / bs);
  const RngKey epoch_root = fold_in(key, 1);
  const RngKey val_key = fold_in(key, 2);

  NetParams params = std::move(init);
  AdamState opt = adam_init(params, cfg.adam);
  FitResult result;
  result.params = params;
  double best = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (int epoch = 1; epoch <= cfg.n_iter; ++epoch) {
    const RngKey ek = fold_in(epoch_root, static_cast<std::uint64_t>(epoch));
    const auto perm = permutation(fold_in(ek, 0), n);
    const std::span<const Eigen::Index> order(perm);
    double train_acc = 0.0;
    for (Eigen::Index b = 0; b < n_batches; ++b) {
      const Eigen::Index start = b * bs;
      // The last batch absorbs the remainder.
      const Eigen::Index count = b + 1 == n_batches ? n - start : bs;
      const Dataset batch = train.select_rows(order.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(count)));
      const RngKey bk = fold_in(ek, static_cast<std::uint64_t>(b + 1));
      auto [loss, grads] =
          value_and_grad([&](const VarParams& p) { return objective(p, batch, bk); }, params);
      if (!std::isfinite(loss))
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(b));
      std::tie(opt, params) = adam_step(std::move(opt), std::move(params), grads);
      train_acc += loss * static_cast<double>(count);
    }
    const double val_loss = objective(as_constants(params), val, val_key).item();
    if (!std::isfinite(val_loss))
      throw NumericError("non-finite validation loss at epoch " + std::to_string(epoch));
    result.losses.train.push_back(train_acc / static_cast<double>(n));
    result.losses.val.push_back(val_loss);
    if (val_loss < best) {
      best = val_loss;
      result.params = params;
      result.best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
      if (cfg.patience > 0 && since_best >= cfg.patience) break;
    }
  }
  return result;
}

void to_json(nlohmann::json& j, const FitConfig& c) {
  j = nlohmann::json{{"n_iter", c.n_iter},
                     {"batch_size", c.batch_size},
                     {"val_fraction", c.val_fraction},
                     {"patience", c.patience},
                     {"lr", c.adam.lr}};
}

void from_json(const nlohmann::json& j, FitConfig& c) {
  const FitConfig d;
  if (!j.is_object()) throw ConfigError("fit config must be a JSON object");
  for (const auto& [k, _] : j.items())
    if (k != "n_iter" && k != "batch_size" && k != "val_fraction" && k != "patience" && k != "lr")
      throw ConfigError("fit config: unknown key '" + k + "'");
  c.n_iter = j.value("n_iter", d.n_iter);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.val_fraction = j.value("val_fraction", d.val_fraction);
  c.patience = j.value("patience", d.patience);
  c.adam.lr = j.value("lr", d.adam.lr);
  if (c.n_iter < 1 || c.batch_size < 1 || c.patience < 0) throw ConfigError("fit config: invalid n_iter/batch_size/patience");
  if (!(c.val_fraction > 0.0 && c.val_fraction < 1.0)) throw ConfigError("fit config: val_fraction must lie in (0, 1)");
  if (!(c.adam.lr > 0.0)) throw ConfigError("fit config: lr must be positive");
}

void write_loss_profile_csv(std::ostream& out, const LossProfile& p) {
  out << "epoch,train,val\n";
  for (std::size_t i = 0; i < p.train.size(); ++i)
    out << i + 1 << ',' << format_double(p.train[i]) << ',' << format_double(i < p.val.size() ? p.val[i] : NAN) << '\n';
}

void write_loss_profile_csv(const std::string& path, const LossProfile& p) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  write_loss_profile_csv(out, p);
}

}  // namespace sbi::nn
