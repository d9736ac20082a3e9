#pragma once

#include "ladiff/autograd.hpp"

#include <vector>

namespace ladiff {

struct AdamWSettings {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
  /// Global gradient-norm clip; <= 0 disables.
  double clip_norm = 1.0;
};

/// Adam with decoupled weight decay. Moment buffers are allocated lazily per
/// parameter, in store order.
template <typename T>
class AdamW {
 public:
  AdamW(ag::ParameterStore<T>& store, AdamWSettings settings);

  /// Applies one update from the accumulated gradients, scaled by
  /// `grad_scale` (e.g. 1/batch). Returns the pre-clip global grad norm.
  double step(T grad_scale = T(1));
  long steps_taken() const { return step_; }
  const AdamWSettings& settings() const { return settings_; }

 private:
  std::vector<ag::Parameter<T>*> params_;
  std::vector<ag::Matrix<T>> m_, v_;
  AdamWSettings settings_;
  long step_ = 0;
};

}  // namespace ladiff
