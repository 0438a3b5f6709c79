#include "lrasr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lrasr::nn {
namespace {

double scalar_of(Tape<double>& t, Var root) {
  const auto& v = t.value(root);
  if (v.rows() != 1 || v.cols() != 1) {
    throw UsageError("grad_check closure must return a scalar (1x1)");
  }
  return v(0, 0);
}

std::vector<Eigen::Index> pick_coords(Eigen::Index n, int max_coords, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  if (max_coords > 0 && n > max_coords) {
    shuffle(idx, rng);
    idx.resize(static_cast<size_t>(max_coords));
  }
  return idx;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const InputClosure& f, std::vector<Matrix<double>> inputs,
                           double eps, int max_coords, uint64_t seed) {
  auto evaluate = [&](bool with_grad, std::vector<Matrix<double>>* grads) {
    Tape<double> t;
    std::vector<Var> vars;
    for (const auto& in : inputs) {
      vars.push_back(with_grad ? t.input(in) : t.constant(in));
    }
    const Var root = f(t, vars);
    const double value = scalar_of(t, root);
    if (with_grad) {
      if (t.needs_grad(root)) {
        t.backward(root);
      }
      for (size_t i = 0; i < vars.size(); ++i) {
        (*grads)[i] = t.has_grad(vars[i])
                          ? t.grad(vars[i])
                          : Matrix<double>::Zero(inputs[i].rows(), inputs[i].cols());
      }
    }
    return value;
  };

  std::vector<Matrix<double>> analytic(inputs.size());
  evaluate(true, &analytic);

  GradCheckResult result;
  Rng rng(seed);
  for (size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index k : pick_coords(inputs[i].size(), max_coords, rng)) {
      double& x = inputs[i].data()[k];
      const double saved = x;
      x = saved + eps;
      const double up = evaluate(false, nullptr);
      x = saved - eps;
      const double down = evaluate(false, nullptr);
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic[i].data()[k], numeric);
      ++result.coords_checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = "input" + std::to_string(i) + "[" + std::to_string(k) + "]";
      }
    }
  }
  return result;
}

GradCheckResult grad_check(const StoreClosure& f, ParamStore<double>& store, double eps,
                           int max_coords, uint64_t seed) {
  auto evaluate = [&](Gradients<double>* grads) {
    Tape<double> t;
    ParamBinding<double> bind(t, store);
    const Var root = f(bind);
    const double value = scalar_of(t, root);
    if (grads != nullptr) {
      if (t.needs_grad(root)) {
        t.backward(root);
      }
      bind.accumulate(*grads);
    }
    return value;
  };

  auto analytic = Gradients<double>::zeros_like(store);
  evaluate(&analytic);

  GradCheckResult result;
  Rng rng(seed);
  for (int i = 0; i < store.size(); ++i) {
    auto& e = store.entry(i);
    if (!store.trainable(e.group)) {
      continue;
    }
    for (Eigen::Index k : pick_coords(e.value.size(), max_coords, rng)) {
      double& x = e.value.data()[k];
      const double saved = x;
      x = saved + eps;
      const double up = evaluate(nullptr);
      x = saved - eps;
      const double down = evaluate(nullptr);
      x = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = relative_error(analytic.values[i].data()[k], numeric);
      ++result.coords_checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = e.name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return result;
}

}  // namespace lrasr::nn
