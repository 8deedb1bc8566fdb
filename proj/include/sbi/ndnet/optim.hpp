#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "sbi/core/dataset.hpp"
#include "sbi/core/rng.hpp"
#include "sbi/ndnet/autodiff.hpp"

namespace sbi::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  long step = 0;
  NetParams m;
  NetParams v;
  AdamConfig cfg;
};

AdamState adam_init(const NetParams& params, AdamConfig cfg = {});

/// Bias-corrected Adam update. Throws ContractError if the trees differ.
std::pair<AdamState, NetParams> adam_step(AdamState state, NetParams params, const NetParams& grads);

struct LossProfile {
  std::vector<double> train;
  std::vector<double> val;
};

struct FitConfig {
  int n_iter = 1000;  // maximal number of epochs
  int batch_size = 128;
  double val_fraction = 0.1;
  int patience = 10;  // 0 disables early stopping
  AdamConfig adam;
};

/// Keys: n_iter, batch_size, val_fraction, patience, lr. Missing keys keep
/// their defaults; unknown keys and invalid values throw ConfigError.
void to_json(nlohmann::json& j, const FitConfig& c);
void from_json(const nlohmann::json& j, FitConfig& c);

/// Header "epoch,train,val", one row per epoch run.
void write_loss_profile_csv(std::ostream& out, const LossProfile& p);
void write_loss_profile_csv(const std::string& path, const LossProfile& p);

/// Minibatch loss. `key` drives any randomness inside the objective (noise
/// draws, contrast sets) and differs per batch and epoch.
using Objective = std::function<Var(const VarParams& params, const Dataset& batch, RngKey key)>;

struct FitResult {
  NetParams params;  // at the best validation loss
  LossProfile losses;
  int best_epoch = 0;  // 1-based
};

/// Splits `data` with split_train_val and trains with Adam on shuffled
/// minibatches. Each epoch's validation loss is computed on the whole
/// validation set with a fixed key.
FitResult fit_loop(const Objective& objective, NetParams init, const Dataset& data, RngKey key, const FitConfig& cfg);

/// Same loop on a caller-provided split.
FitResult fit_loop(const Objective& objective, NetParams init, const Dataset& train, const Dataset& val, RngKey key,
                   const FitConfig& cfg);

}  // namespace sbi::nn
