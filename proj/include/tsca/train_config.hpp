#pragma once

#include <cmath>
#include <cstdint>

#include "tsca/common.hpp"

namespace tsca {

struct TrainConfig {
  double lr = 2e-4;
  int epochs = 500;
  int batch = 64;
  int warmup_epochs = 10;
  double temperature = 0.1;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  bool symmetric_loss = false;
  bool drop_last = true;

  void validate() const {
    if (!(lr > 0)) throw ArgumentError("TrainConfig: lr must be > 0");
    if (!(temperature > 0)) throw ArgumentError("TrainConfig: temperature must be > 0");
    if (batch < 2) throw ArgumentError("TrainConfig: batch must be >= 2");
    if (epochs < 0) throw ArgumentError("TrainConfig: epochs must be >= 0");
    if (warmup_epochs < 0) throw ArgumentError("TrainConfig: warmup_epochs must be >= 0");
    if (epochs > 0 && warmup_epochs >= epochs)
      throw ArgumentError("TrainConfig: warmup_epochs must be < epochs");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1))
      throw ArgumentError("TrainConfig: betas must be in [0, 1)");
  }
};

/// Linear warmup to lr over warmup_epochs, then cosine decay to zero at
/// the final epoch. Both phases are stepped per epoch.
inline double lr_schedule(int epoch, double lr, int epochs, int warmup_epochs) {
  if (epoch < 0 || epoch >= epochs) throw ArgumentError("lr_schedule: epoch out of range");
  if (epoch < warmup_epochs)
    return lr * static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs);
  const double t =
      static_cast<double>(epoch - warmup_epochs) / static_cast<double>(epochs - warmup_epochs);
  return lr * 0.5 * (1.0 + std::cos(M_PI * t));
}

inline double lr_at(int epoch, const TrainConfig& cfg) {
  return lr_schedule(epoch, cfg.lr, cfg.epochs, cfg.warmup_epochs);
}

}  // namespace tsca
