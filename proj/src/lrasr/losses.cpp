#include "lrasr/losses.hpp"

#include <cmath>
#include <memory>
#include <limits>

namespace lrasr {
namespace {

template <typename S>
S log_add(S a, S b) {
  constexpr S kNegInf = -std::numeric_limits<S>::infinity();
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const S m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

int ctc_min_frames(std::span<const int> labels) {
  int n = static_cast<int>(labels.size());
  for (size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) {
      ++n;
    }
  }
  return n;
}

template <typename S>
LossAndGrad<S> ctc_loss(const nn::Matrix<S>& logits, std::span<const int> labels,
                        int blank, bool with_grad) {
  constexpr S kNegInf = -std::numeric_limits<S>::infinity();
  const int num_t = static_cast<int>(logits.rows());
  const int num_c = static_cast<int>(logits.cols());
  for (int l : labels) {
    if (l < 0 || l >= num_c || l == blank) {
      throw DataError("CTC label " + std::to_string(l) + " invalid for " +
                      std::to_string(num_c) + " classes (blank " +
                      std::to_string(blank) + ")");
    }
  }
  const int need = ctc_min_frames(labels);
  if (num_t < need || num_t == 0) {
    throw CtcLengthError("CTC: " + std::to_string(labels.size()) + " labels need " +
                         std::to_string(need) + " frames, have " + std::to_string(num_t));
  }

  const nn::Matrix<S> logp = nn::log_softmax_row_kernel(logits);
  const int num_s = 2 * static_cast<int>(labels.size()) + 1;
  std::vector<int> ext(num_s, blank);
  for (size_t i = 0; i < labels.size(); ++i) {
    ext[2 * i + 1] = labels[i];
  }
  auto can_skip = [&](int s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  nn::Matrix<S> alpha = nn::Matrix<S>::Constant(num_t, num_s, kNegInf);
  alpha(0, 0) = logp(0, ext[0]);
  if (num_s > 1) alpha(0, 1) = logp(0, ext[1]);
  for (int t = 1; t < num_t; ++t) {
    for (int s = 0; s < num_s; ++s) {
      S a = alpha(t - 1, s);
      if (s >= 1) a = log_add(a, alpha(t - 1, s - 1));
      if (can_skip(s)) a = log_add(a, alpha(t - 1, s - 2));
      if (a != kNegInf) alpha(t, s) = a + logp(t, ext[s]);
    }
  }
  S log_prob = alpha(num_t - 1, num_s - 1);
  if (num_s > 1) log_prob = log_add(log_prob, alpha(num_t - 1, num_s - 2));

  LossAndGrad<S> out;
  out.loss = -log_prob;
  if (!with_grad) {
    return out;
  }

  nn::Matrix<S> beta = nn::Matrix<S>::Constant(num_t, num_s, kNegInf);
  beta(num_t - 1, num_s - 1) = logp(num_t - 1, ext[num_s - 1]);
  if (num_s > 1) beta(num_t - 1, num_s - 2) = logp(num_t - 1, ext[num_s - 2]);
  for (int t = num_t - 2; t >= 0; --t) {
    for (int s = 0; s < num_s; ++s) {
      S b = beta(t + 1, s);
      if (s + 1 < num_s) b = log_add(b, beta(t + 1, s + 1));
      if (s + 2 < num_s && can_skip(s + 2)) b = log_add(b, beta(t + 1, s + 2));
      if (b != kNegInf) beta(t, s) = b + logp(t, ext[s]);
    }
  }

  out.grad = logp.array().exp();
  for (int t = 0; t < num_t; ++t) {
    for (int s = 0; s < num_s; ++s) {
      const S ab = alpha(t, s) + beta(t, s);
      if (ab == kNegInf || std::isnan(ab)) continue;
      out.grad(t, ext[s]) -= std::exp(ab - logp(t, ext[s]) - log_prob);
    }
  }
  return out;
}

template <typename S>
LossAndGrad<S> ce_label_smoothed(const nn::Matrix<S>& logits, std::span<const int> labels,
                                 double eps, bool with_grad) {
  const int num_l = static_cast<int>(logits.rows());
  const int num_v = static_cast<int>(logits.cols());
  if (static_cast<int>(labels.size()) != num_l) {
    throw DataError("CE: " + std::to_string(labels.size()) + " labels for " +
                    std::to_string(num_l) + " positions");
  }
  for (int l : labels) {
    if (l < 0 || l >= num_v) {
      throw DataError("CE label id " + std::to_string(l) + " out of range [0, " +
                      std::to_string(num_v) + ")");
    }
  }
  const S on = static_cast<S>(1.0 - eps);
  const S off = num_v > 1 ? static_cast<S>(eps / (num_v - 1)) : S(0);
  const nn::Matrix<S> logp = nn::log_softmax_row_kernel(logits);
  LossAndGrad<S> out;
  S total = 0;
  for (int r = 0; r < num_l; ++r) {
    const S row_sum = logp.row(r).sum();
    const S target = logp(r, labels[r]);
    total -= off * (row_sum - target) + on * target;
  }
  out.loss = num_l > 0 ? total / num_l : S(0);
  if (with_grad) {
    out.grad = logp.array().exp();
    for (int r = 0; r < num_l; ++r) {
      out.grad.row(r).array() -= off;
      out.grad(r, labels[r]) -= on - off;
    }
    if (num_l > 0) out.grad /= static_cast<S>(num_l);
  }
  return out;
}

template <typename S>
nn::Var ctc_loss(nn::Tape<S>& t, nn::Var logits, std::span<const int> labels, int blank) {
  auto r = ctc_loss<S>(t.value(logits), labels, blank, t.needs_grad(logits));
  nn::Matrix<S> y(1, 1);
  y(0, 0) = r.loss;
  auto grad = std::make_shared<nn::Matrix<S>>(std::move(r.grad));
  return t.push(std::move(y), t.needs_grad(logits), [logits, grad](nn::Tape<S>& t, int self) {
    t.grad(logits) += t.grad(nn::Var{self})(0, 0) * (*grad);
  });
}

template <typename S>
nn::Var ce_label_smoothed(nn::Tape<S>& t, nn::Var logits, std::span<const int> labels,
                          double eps) {
  auto r = ce_label_smoothed<S>(t.value(logits), labels, eps, t.needs_grad(logits));
  nn::Matrix<S> y(1, 1);
  y(0, 0) = r.loss;
  auto grad = std::make_shared<nn::Matrix<S>>(std::move(r.grad));
  return t.push(std::move(y), t.needs_grad(logits), [logits, grad](nn::Tape<S>& t, int self) {
    t.grad(logits) += t.grad(nn::Var{self})(0, 0) * (*grad);
  });
}

template <typename S>
JointLossResult<S> joint_loss(nn::Tape<S>& t, const JointLogits& heads,
                              std::span<const int> ctc_labels,
                              std::span<const int> ce_targets, int blank,
                              double label_smoothing, const LossWeights& w) {
  const nn::Var ctc_uni = ctc_loss(t, heads.ctc_uni, ctc_labels, blank);
  const nn::Var ctc_bi = ctc_loss(t, heads.ctc_bi, ctc_labels, blank);
  const nn::Var ce_mocha = ce_label_smoothed(t, heads.ce_mocha, ce_targets, label_smoothing);
  const nn::Var ce_bfa = ce_label_smoothed(t, heads.ce_bfa, ce_targets, label_smoothing);

  JointLossResult<S> out;
  out.bundle.l_ctc_uni = static_cast<double>(t.value(ctc_uni)(0, 0));
  out.bundle.l_ctc_bi = static_cast<double>(t.value(ctc_bi)(0, 0));
  out.bundle.l_ce_mocha = static_cast<double>(t.value(ce_mocha)(0, 0));
  out.bundle.l_ce_bfa = static_cast<double>(t.value(ce_bfa)(0, 0));

  nn::Var total = nn::scale(t, ctc_uni, static_cast<S>(w.ctc_uni));
  total = nn::add(t, total, nn::scale(t, ctc_bi, static_cast<S>(w.ctc_bi)));
  total = nn::add(t, total, nn::scale(t, ce_mocha, static_cast<S>(w.ce_mocha)));
  total = nn::add(t, total, nn::scale(t, ce_bfa, static_cast<S>(w.ce_bfa)));
  out.total = total;
  out.bundle.l_total = static_cast<double>(t.value(total)(0, 0));
  return out;
}

#define LRASR_INSTANTIATE(S)                                                              \
  template LossAndGrad<S> ctc_loss<S>(const nn::Matrix<S>&, std::span<const int>, int,  \
                                      bool);                                              \
  template LossAndGrad<S> ce_label_smoothed<S>(const nn::Matrix<S>&, std::span<const int>, \
                                               double, bool);                             \
  template nn::Var ctc_loss<S>(nn::Tape<S>&, nn::Var, std::span<const int>, int);        \
  template nn::Var ce_label_smoothed<S>(nn::Tape<S>&, nn::Var, std::span<const int>,     \
                                        double);                                          \
  template JointLossResult<S> joint_loss<S>(nn::Tape<S>&, const JointLogits&,             \
                                            std::span<const int>, std::span<const int>,   \
                                            int, double, const LossWeights&);

LRASR_INSTANTIATE(float)
LRASR_INSTANTIATE(double)

#undef LRASR_INSTANTIATE

}  // namespace lrasr
