#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lrasr/common.hpp"

namespace lrasr::nn {

template <typename S>
using Matrix = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense row-major matrices. Each op pushes a node
// holding its value and a closure that scatters the node's gradient into its
// inputs. Nodes whose inputs need no gradient record no closure, so frozen
// sub-graphs cost nothing on the backward pass.
template <typename S>
class Tape {
 public:
  using Mat = Matrix<S>;
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  // Differentiable input owned by the tape.
  Var input(Mat value);
  // Leaf aliasing external storage (parameters); `ref` must outlive the tape.
  Var param(const Mat& ref, bool needs_grad);

  Var push(Mat value, bool needs_grad, Backward backward);

  const Mat& value(Var v) const;
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  // Gradient buffer, zero-initialized on first access.
  Mat& grad(Var v);
  bool has_grad(Var v) const { return nodes_[v.id].grad.size() > 0; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // Seeds d(root)/d(root) = 1 for a 1x1 root and runs all closures in
  // reverse creation order.
  void backward(Var root);

  // Diagnostic: throws DivergenceError if any value is NaN/Inf.
  void check_finite(Var v, const char* what) const;

 private:
  struct Node {
    Mat value;
    const Mat* ref = nullptr;
    Mat grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::deque<Node> nodes_;
};

template <typename S>
struct LstmOutputs {
  Var outputs;  // T x H
  Var final_c;  // 1 x H
};

template <typename S>
struct LstmParams {
  Var w_input;      // 4H x d_in, gate order i, f, g, o
  Var w_recurrent;  // 4H x H
  Var bias;         // 1 x 4H
};

// --- elementary ops -------------------------------------------------------
template <typename S> Var matmul(Tape<S>& t, Var a, Var b);
// x (n x in) * W^T (W is out x in) + b (1 x out)
template <typename S> Var affine(Tape<S>& t, Var x, Var w, Var b);
template <typename S> Var add(Tape<S>& t, Var a, Var b);
template <typename S> Var add_scalar(Tape<S>& t, Var a, S s);
template <typename S> Var scale(Tape<S>& t, Var a, S s);
// Adds a constant matrix (no gradient flows into it).
template <typename S> Var add_const(Tape<S>& t, Var a, const Matrix<S>& c);
template <typename S> Var concat_cols(Tape<S>& t, Var a, Var b);
template <typename S> Var stack_rows(Tape<S>& t, std::span<const Var> rows);
template <typename S> Var row(Tape<S>& t, Var a, int i);
template <typename S> Var tanh(Tape<S>& t, Var a);
template <typename S> Var sigmoid(Tape<S>& t, Var a);
template <typename S> Var softmax_rows(Tape<S>& t, Var a);
template <typename S> Var log_softmax_rows(Tape<S>& t, Var a);
template <typename S> Var sum_all(Tape<S>& t, Var a);
template <typename S> Var embedding(Tape<S>& t, Var table, int id);
// Inverted dropout; identity when rate == 0.
template <typename S> Var dropout(Tape<S>& t, Var x, double rate, Rng& rng);

// --- sequence ops ---------------------------------------------------------
// Max over non-overlapping windows of `factor` rows; the last window may be
// partial. Gradients route to the argmax element.
template <typename S> Var maxpool_time(Tape<S>& t, Var x, int factor);

// Full LSTM pass over the rows of x. reverse = true iterates t = T-1 .. 0 and
// writes output row t at position t.
template <typename S>
LstmOutputs<S> lstm_layer(Tape<S>& t, Var x, const LstmParams<S>& p, Var h0,
                          Var c0, bool reverse);

struct LstmCellResult {
  Var h;
  Var c;
};
template <typename S>
LstmCellResult lstm_cell(Tape<S>& t, Var x, Var h, Var c,
                         const LstmParams<S>& p);

// e_j = sum_a v_a * tanh(keys_ja + query_a); keys T x A, query/v 1 x A.
template <typename S> Var additive_energy(Tape<S>& t, Var keys, Var query, Var v);

// Expected monotonic alignment. p is 1 x T selection probabilities; prev is
// 1 x (T+1) where column 0 holds the mass still parked at the start boundary
// and column j the mass on frame j. Each output step must advance at least
// one frame:
//   q_1 = prev_0,  q_j = (1 - p_{j-1}) q_{j-1} + prev_{j-1},  alpha_j = p_j q_j
// Returns 1 x (T+1) with column 0 = 0.
template <typename S> Var monotonic_alignment(Tape<S>& t, Var p, Var prev);

// Chunkwise attention: spreads each alpha_j (columns 1..T of alpha) over a
// softmax of u restricted to the window of `width` frames ending at j.
// Returns 1 x T; sum(beta) == sum(alpha).
template <typename S> Var chunk_attention(Tape<S>& t, Var alpha, Var u, int width);

// --- shared kernels used by tape ops and the inference path ----------------
template <typename S>
void lstm_cell_kernel(const Matrix<S>& z, const Matrix<S>& c_prev, Matrix<S>& gates,
                      Matrix<S>& c_next, Matrix<S>& h_next);

template <typename S>
Matrix<S> maxpool_kernel(const Matrix<S>& x, int factor);

template <typename S>
Matrix<S> monotonic_alignment_kernel(const Matrix<S>& p, const Matrix<S>& prev);

template <typename S>
Matrix<S> chunk_attention_kernel(const Matrix<S>& alpha, const Matrix<S>& u,
                                 int width);

// Softmax of u over the `width` frames ending at frame j (1-based), written
// into a 1 x T row that is zero elsewhere.
template <typename S>
Matrix<S> window_softmax(const Matrix<S>& u, int j, int width);

template <typename S>
Matrix<S> softmax_row_kernel(const Matrix<S>& x);
template <typename S>
Matrix<S> log_softmax_row_kernel(const Matrix<S>& x);

}  // namespace lrasr::nn
