#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "paid/model.hpp"

namespace paid {

struct OptimState {
  std::vector<Tensor> velocity;
  int epoch = 0;
  std::size_t step = 0;

  /// Zero velocities mirroring `params`.
  [[nodiscard]] static OptimState zeros_like(const Params& params);
};

/// SGD with heavy-ball momentum and L2 weight decay:
///   g' = g + wd * theta;  v <- momentum * v + g';  theta <- theta - lr * v.
/// Throws ShapeError when grads or velocities do not mirror params.
void sgd_step(Params& params, std::span<const Tensor> grads, OptimState& state, Real lr, Real momentum,
              Real weight_decay);

/// Step-decay schedule: lr_initial * factor^(#decay epochs <= epoch). The new
/// rate applies from the decay epoch itself.
[[nodiscard]] Real lr_at_epoch(Real lr_initial, std::span<const int> decay_epochs, Real decay_factor, int epoch);

/// Running arithmetic mean of parameter snapshots.
class SwaState {
 public:
  /// Absorbs one snapshot: avg <- avg + (theta - avg) / (count + 1).
  void update(const Params& params);
  /// Mean of all absorbed snapshots. Throws ContractError when empty.
  [[nodiscard]] Params finalize() const;
  [[nodiscard]] std::size_t count() const noexcept { return count_; }

 private:
  Params average_;
  std::size_t count_ = 0;
};

}  // namespace paid
