#include "paid/optim.hpp"

#include <cmath>

#include "paid/error.hpp"

namespace paid {

OptimState OptimState::zeros_like(const Params& params) {
  OptimState s;
  s.velocity.reserve(params.size());
  for (const auto& t : params.tensors) s.velocity.emplace_back(t.value.shape());
  return s;
}

void sgd_step(Params& params, std::span<const Tensor> grads, OptimState& state, Real lr, Real momentum,
              Real weight_decay) {
  if (grads.size() != params.size()) {
    throw ShapeError("sgd_step: " + std::to_string(grads.size()) + " gradients for " + std::to_string(params.size()) +
                     " parameters");
  }
  if (state.velocity.empty()) state = OptimState::zeros_like(params);
  if (state.velocity.size() != params.size()) throw ShapeError("sgd_step: optimizer state does not mirror params");
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& theta = params.tensors[k].value;
    auto& v = state.velocity[k];
    const auto& g = grads[k];
    if (g.shape() != theta.shape() || v.shape() != theta.shape()) {
      throw ShapeError("sgd_step: shape mismatch for " + params.tensors[k].name + ": param " +
                       to_string(theta.shape()) + ", grad " + to_string(g.shape()));
    }
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      const Real gi = g[i] + weight_decay * theta[i];
      v[i] = momentum * v[i] + gi;
      theta[i] -= lr * v[i];
    }
  }
  ++state.step;
}

Real lr_at_epoch(Real lr_initial, std::span<const int> decay_epochs, Real decay_factor, int epoch) {
  Real lr = lr_initial;
  for (int d : decay_epochs)
    if (d <= epoch) lr *= decay_factor;
  return lr;
}

void SwaState::update(const Params& params) {
  if (count_ == 0) {
    average_ = params;
    count_ = 1;
    return;
  }
  if (params.size() != average_.size()) throw ShapeError("swa: parameter count changed");
  const Real inv = Real{1} / static_cast<Real>(count_ + 1);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& avg = average_.tensors[k].value;
    const auto& cur = params.tensors[k].value;
    if (avg.shape() != cur.shape()) throw ShapeError("swa: shape changed for " + params.tensors[k].name);
    for (std::size_t i = 0; i < avg.numel(); ++i) avg[i] += (cur[i] - avg[i]) * inv;
  }
  ++count_;
}

Params SwaState::finalize() const {
  if (count_ == 0) throw ContractError("swa: finalize with no absorbed checkpoints");
  return average_;
}

}  // namespace paid
