#include "lrasr/optimizer.hpp"

#include <cmath>

namespace lrasr::nn {

template <typename S>
double Adam<S>::step(ParamStore<S>& store, const Gradients<S>& grads) {
  if (moments_.size() < static_cast<size_t>(store.size())) {
    moments_.resize(store.size());
  }
  double sq = 0.0;
  for (int i = 0; i < store.size(); ++i) {
    if (store.trainable(store.entry(i).group) && grads.values[i].size() > 0) {
      sq += static_cast<double>(grads.values[i].squaredNorm());
    }
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) {
    throw DivergenceError("non-finite gradient norm");
  }
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm)
                          ? cfg_.clip_norm / norm
                          : 1.0;
  for (int i = 0; i < store.size(); ++i) {
    auto& e = store.entry(i);
    if (!store.trainable(e.group) || grads.values[i].size() == 0) {
      continue;
    }
    auto& mo = moments_[i];
    if (mo.m.size() == 0) {
      mo.m = Matrix<S>::Zero(e.value.rows(), e.value.cols());
      mo.v = Matrix<S>::Zero(e.value.rows(), e.value.cols());
    }
    ++mo.steps;
    const S b1 = static_cast<S>(cfg_.beta1);
    const S b2 = static_cast<S>(cfg_.beta2);
    const auto g = grads.values[i].array() * static_cast<S>(clip);
    mo.m.array() = b1 * mo.m.array() + (S(1) - b1) * g;
    mo.v.array() = b2 * mo.v.array() + (S(1) - b2) * g.square();
    const S c1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, mo.steps));
    const S c2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, mo.steps));
    const S lr = static_cast<S>(cfg_.lr);
    const S eps = static_cast<S>(cfg_.eps);
    e.value.array() -= lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + eps);
  }
  return norm;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace lrasr::nn
