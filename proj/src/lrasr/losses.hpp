#pragma once

#include <span>
#include <vector>

#include "lrasr/common.hpp"
#include "lrasr/tape.hpp"

namespace lrasr {

// Raised when a CTC target cannot be aligned to the available frames. The
// training loop skips such utterances with a warning.
class CtcLengthError : public DataError {
 public:
  using DataError::DataError;
};

// Frames needed to align `labels`: one per label plus a separating blank
// between each pair of identical neighbours.
int ctc_min_frames(std::span<const int> labels);

template <typename S>
struct LossAndGrad {
  S loss = 0;
  nn::Matrix<S> grad;  // d loss / d logits
};

// -log sum over all blank-augmented alignments of `labels`, computed with
// the log-space forward recursion; the gradient w.r.t. the (unnormalized)
// logits comes from forward-backward posteriors.
template <typename S>
LossAndGrad<S> ctc_loss(const nn::Matrix<S>& logits, std::span<const int> labels,
                        int blank, bool with_grad = true);

// Cross-entropy against a smoothed target: 1 - eps on the label, eps/(V-1)
// on every other class; mean over positions.
template <typename S>
LossAndGrad<S> ce_label_smoothed(const nn::Matrix<S>& logits, std::span<const int> labels,
                                 double eps, bool with_grad = true);

template <typename S>
nn::Var ctc_loss(nn::Tape<S>& t, nn::Var logits, std::span<const int> labels, int blank);

template <typename S>
nn::Var ce_label_smoothed(nn::Tape<S>& t, nn::Var logits, std::span<const int> labels,
                          double eps);

// The four heads produced by one joint forward pass.
struct JointLogits {
  nn::Var ctc_uni;   // T' x V
  nn::Var ctc_bi;    // T' x V
  nn::Var ce_mocha;  // (L+1) x V, teacher-forced, last row predicts eos
  nn::Var ce_bfa;    // (L+1) x V
};

struct LossWeights {
  double ctc_uni = 1.0;
  double ctc_bi = 1.0;
  double ce_mocha = 1.0;
  double ce_bfa = 1.0;
};

struct LossBundle {
  double l_ctc_uni = 0;
  double l_ctc_bi = 0;
  double l_ce_mocha = 0;
  double l_ce_bfa = 0;
  double l_total = 0;
};

template <typename S>
struct JointLossResult {
  nn::Var total;  // 1x1, differentiable
  LossBundle bundle;
};

// L_total = L_ctc(uni) + L_ctc(bi) + L_ce(mocha) + L_ce(bfa), each optionally
// weighted (all weights default to 1). ctc_labels are the token ids;
// ce_targets are the token ids followed by eos. Throws CtcLengthError when
// either CTC head is too short.
template <typename S>
JointLossResult<S> joint_loss(nn::Tape<S>& t, const JointLogits& heads,
                              std::span<const int> ctc_labels,
                              std::span<const int> ce_targets, int blank,
                              double label_smoothing, const LossWeights& w = {});

}  // namespace lrasr
