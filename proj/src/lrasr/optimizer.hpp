#pragma once

#include <vector>

#include "lrasr/params.hpp"

namespace lrasr::nn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global gradient-norm clipping; <= 0 disables
};

// Adam with global-norm clipping. Tensors of frozen groups are skipped
// entirely: no moment updates, no step-count advance.
template <typename S>
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  // Applies one update and returns the (pre-clipping) gradient norm over the
  // trainable tensors.
  double step(ParamStore<S>& store, const Gradients<S>& grads);

  const AdamConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  struct Moments {
    Matrix<S> m;
    Matrix<S> v;
    long steps = 0;
  };
  AdamConfig cfg_;
  std::vector<Moments> moments_;
};

}  // namespace lrasr::nn
