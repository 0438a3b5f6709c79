#include "lrasr/tape.hpp"

#include <cmath>
#include <memory>

namespace lrasr::nn {

// --- Tape ------------------------------------------------------------------

template <typename S>
Var Tape<S>::constant(Mat value) {
  return push(std::move(value), false, nullptr);
}

template <typename S>
Var Tape<S>::input(Mat value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename S>
Var Tape<S>::param(const Mat& ref, bool needs_grad) {
  Node n;
  n.ref = &ref;
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename S>
Var Tape<S>::push(Mat value, bool needs_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) {
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename S>
const typename Tape<S>::Mat& Tape<S>::value(Var v) const {
  const Node& n = nodes_[v.id];
  return n.ref != nullptr ? *n.ref : n.value;
}

template <typename S>
typename Tape<S>::Mat& Tape<S>::grad(Var v) {
  Node& n = nodes_[v.id];
  if (n.grad.size() == 0) {
    const Mat& val = n.ref != nullptr ? *n.ref : n.value;
    n.grad = Mat::Zero(val.rows(), val.cols());
  }
  return n.grad;
}

template <typename S>
void Tape<S>::backward(Var root) {
  const Mat& r = value(root);
  if (r.rows() != 1 || r.cols() != 1) {
    throw UsageError("backward() needs a scalar (1x1) root");
  }
  grad(root)(0, 0) += S(1);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.backward && n.grad.size() > 0) {
      n.backward(*this, i);
    }
  }
}

template <typename S>
void Tape<S>::check_finite(Var v, const char* what) const {
  if (!value(v).allFinite()) {
    throw DivergenceError(std::string("non-finite values in ") + what);
  }
}

namespace {

template <typename S>
bool any_needs(const Tape<S>& t, std::initializer_list<Var> vs) {
  for (Var v : vs) {
    if (v.valid() && t.needs_grad(v)) {
      return true;
    }
  }
  return false;
}

void require(bool cond, const char* msg) {
  if (!cond) {
    throw UsageError(msg);
  }
}

}  // namespace

// --- kernels ---------------------------------------------------------------

template <typename S>
Matrix<S> softmax_row_kernel(const Matrix<S>& x) {
  Matrix<S> y(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    const S m = x.row(r).maxCoeff();
    y.row(r) = (x.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

template <typename S>
Matrix<S> log_softmax_row_kernel(const Matrix<S>& x) {
  Matrix<S> y(x.rows(), x.cols());
  for (int r = 0; r < x.rows(); ++r) {
    const S m = x.row(r).maxCoeff();
    const S lse = m + std::log((x.row(r).array() - m).exp().sum());
    y.row(r) = x.row(r).array() - lse;
  }
  return y;
}

template <typename S>
void lstm_cell_kernel(const Matrix<S>& z, const Matrix<S>& c_prev, Matrix<S>& gates,
                      Matrix<S>& c_next, Matrix<S>& h_next) {
  const int h = static_cast<int>(c_prev.cols());
  gates.resize(1, 4 * h);
  auto sig = [](S v) { return S(1) / (S(1) + std::exp(-v)); };
  for (int k = 0; k < h; ++k) {
    gates(0, k) = sig(z(0, k));
    gates(0, h + k) = sig(z(0, h + k));
    gates(0, 2 * h + k) = std::tanh(z(0, 2 * h + k));
    gates(0, 3 * h + k) = sig(z(0, 3 * h + k));
  }
  c_next.resize(1, h);
  h_next.resize(1, h);
  for (int k = 0; k < h; ++k) {
    const S c = gates(0, h + k) * c_prev(0, k) + gates(0, k) * gates(0, 2 * h + k);
    c_next(0, k) = c;
    h_next(0, k) = gates(0, 3 * h + k) * std::tanh(c);
  }
}

template <typename S>
Matrix<S> maxpool_kernel(const Matrix<S>& x, int factor) {
  require(factor >= 1, "maxpool factor must be >= 1");
  const int t_in = static_cast<int>(x.rows());
  const int t_out = (t_in + factor - 1) / factor;
  Matrix<S> y(t_out, x.cols());
  for (int o = 0; o < t_out; ++o) {
    const int lo = o * factor;
    const int n = std::min(factor, t_in - lo);
    y.row(o) = x.middleRows(lo, n).colwise().maxCoeff();
  }
  return y;
}

template <typename S>
Matrix<S> monotonic_alignment_kernel(const Matrix<S>& p, const Matrix<S>& prev) {
  const int num_t = static_cast<int>(p.cols());
  require(prev.cols() == num_t + 1 && p.rows() == 1 && prev.rows() == 1,
          "monotonic_alignment: prev must be 1 x (T+1)");
  Matrix<S> alpha = Matrix<S>::Zero(1, num_t + 1);
  S q = 0;
  for (int j = 1; j <= num_t; ++j) {
    q = j == 1 ? prev(0, 0) : (S(1) - p(0, j - 2)) * q + prev(0, j - 1);
    alpha(0, j) = p(0, j - 1) * q;
  }
  return alpha;
}

template <typename S>
Matrix<S> window_softmax(const Matrix<S>& u, int j, int width) {
  const int num_t = static_cast<int>(u.cols());
  Matrix<S> s = Matrix<S>::Zero(1, num_t);
  const int lo = std::max(1, j - width + 1);
  S m = u(0, lo - 1);
  for (int l = lo; l <= j; ++l) {
    m = std::max(m, u(0, l - 1));
  }
  S z = 0;
  for (int l = lo; l <= j; ++l) {
    s(0, l - 1) = std::exp(u(0, l - 1) - m);
    z += s(0, l - 1);
  }
  s /= z;
  return s;
}

template <typename S>
Matrix<S> chunk_attention_kernel(const Matrix<S>& alpha, const Matrix<S>& u,
                                 int width) {
  const int num_t = static_cast<int>(u.cols());
  require(width >= 1, "chunk width must be >= 1");
  require(alpha.cols() == num_t + 1, "chunk_attention: alpha must be 1 x (T+1)");
  Matrix<S> beta = Matrix<S>::Zero(1, num_t);
  for (int j = 1; j <= num_t; ++j) {
    if (alpha(0, j) == S(0)) {
      continue;
    }
    beta += alpha(0, j) * window_softmax(u, j, width);
  }
  return beta;
}

// --- elementary ops ----------------------------------------------------------

template <typename S>
Var matmul(Tape<S>& t, Var a, Var b) {
  require(t.value(a).cols() == t.value(b).rows(), "matmul: shape mismatch");
  Matrix<S> y = t.value(a) * t.value(b);
  return t.push(std::move(y), any_needs(t, {a, b}), [a, b](Tape<S>& t, int self) {
    const auto& g = t.grad(Var{self});
    if (t.needs_grad(a)) t.grad(a).noalias() += g * t.value(b).transpose();
    if (t.needs_grad(b)) t.grad(b).noalias() += t.value(a).transpose() * g;
  });
}

template <typename S>
Var affine(Tape<S>& t, Var x, Var w, Var b) {
  const auto& X = t.value(x);
  const auto& W = t.value(w);
  const auto& B = t.value(b);
  if (X.cols() != W.cols() || B.rows() != 1 || B.cols() != W.rows()) {
    throw UsageError("affine: shape mismatch (" + std::to_string(X.rows()) + "x" +
                     std::to_string(X.cols()) + " by " + std::to_string(W.rows()) +
                     "x" + std::to_string(W.cols()) + ")");
  }
  Matrix<S> y = X * W.transpose();
  y.rowwise() += B.row(0);
  return t.push(std::move(y), any_needs(t, {x, w, b}), [x, w, b](Tape<S>& t, int self) {
    const auto& g = t.grad(Var{self});
    if (t.needs_grad(x)) t.grad(x).noalias() += g * t.value(w);
    if (t.needs_grad(w)) t.grad(w).noalias() += g.transpose() * t.value(x);
    if (t.needs_grad(b)) t.grad(b) += g.colwise().sum();
  });
}

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  // b may match a, be a 1 x n row broadcast over rows, or a 1x1 scalar.
  const bool scalar = B.rows() == 1 && B.cols() == 1 && A.size() != 1;
  const bool broadcast = !scalar && B.rows() == 1 && A.rows() != 1;
  require(scalar || (A.cols() == B.cols() && (broadcast || A.rows() == B.rows())),
          "add: shape mismatch");
  Matrix<S> y = A;
  if (scalar) {
    y.array() += B(0, 0);
  } else if (broadcast) {
    y.rowwise() += B.row(0);
  } else {
    y += B;
  }
  return t.push(std::move(y), any_needs(t, {a, b}),
                [a, b, broadcast, scalar](Tape<S>& t, int self) {
                  const auto& g = t.grad(Var{self});
                  if (t.needs_grad(a)) t.grad(a) += g;
                  if (t.needs_grad(b)) {
                    if (scalar) {
                      t.grad(b)(0, 0) += g.sum();
                    } else if (broadcast) {
                      t.grad(b) += g.colwise().sum();
                    } else {
                      t.grad(b) += g;
                    }
                  }
                });
}

template <typename S>
Var add_scalar(Tape<S>& t, Var a, S s) {
  Matrix<S> y = t.value(a).array() + s;
  return t.push(std::move(y), t.needs_grad(a),
                [a](Tape<S>& t, int self) { t.grad(a) += t.grad(Var{self}); });
}

template <typename S>
Var scale(Tape<S>& t, Var a, S s) {
  Matrix<S> y = t.value(a) * s;
  return t.push(std::move(y), t.needs_grad(a),
                [a, s](Tape<S>& t, int self) { t.grad(a) += t.grad(Var{self}) * s; });
}

template <typename S>
Var add_const(Tape<S>& t, Var a, const Matrix<S>& c) {
  require(t.value(a).rows() == c.rows() && t.value(a).cols() == c.cols(),
          "add_const: shape mismatch");
  Matrix<S> y = t.value(a) + c;
  return t.push(std::move(y), t.needs_grad(a),
                [a](Tape<S>& t, int self) { t.grad(a) += t.grad(Var{self}); });
}

template <typename S>
Var concat_cols(Tape<S>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  require(A.rows() == B.rows(), "concat_cols: row mismatch");
  Matrix<S> y(A.rows(), A.cols() + B.cols());
  y << A, B;
  const auto na = A.cols();
  const auto nb = B.cols();
  return t.push(std::move(y), any_needs(t, {a, b}), [a, b, na, nb](Tape<S>& t, int self) {
    const auto& g = t.grad(Var{self});
    if (t.needs_grad(a)) t.grad(a) += g.leftCols(na);
    if (t.needs_grad(b)) t.grad(b) += g.rightCols(nb);
  });
}

template <typename S>
Var stack_rows(Tape<S>& t, std::span<const Var> rows) {
  require(!rows.empty(), "stack_rows: no rows");
  const auto cols = t.value(rows[0]).cols();
  Matrix<S> y(static_cast<int>(rows.size()), cols);
  bool needs = false;
  for (size_t i = 0; i < rows.size(); ++i) {
    require(t.value(rows[i]).rows() == 1 && t.value(rows[i]).cols() == cols,
            "stack_rows: inputs must be 1 x n rows of equal width");
    y.row(static_cast<int>(i)) = t.value(rows[i]);
    needs = needs || t.needs_grad(rows[i]);
  }
  std::vector<Var> ins(rows.begin(), rows.end());
  return t.push(std::move(y), needs, [ins](Tape<S>& t, int self) {
    const auto& g = t.grad(Var{self});
    for (size_t i = 0; i < ins.size(); ++i) {
      if (t.needs_grad(ins[i])) t.grad(ins[i]) += g.row(static_cast<int>(i));
    }
  });
}

template <typename S>
Var row(Tape<S>& t, Var a, int i) {
  require(i >= 0 && i < t.value(a).rows(), "row: index out of range");
  Matrix<S> y = t.value(a).row(i);
  return t.push(std::move(y), t.needs_grad(a), [a, i](Tape<S>& t, int self) {
    t.grad(a).row(i) += t.grad(Var{self});
  });
}

template <typename S>
Var tanh(Tape<S>& t, Var a) {
  Matrix<S> y = t.value(a).array().tanh();
  return t.push(std::move(y), t.needs_grad(a), [a](Tape<S>& t, int self) {
    const auto& y = t.value(Var{self});
    t.grad(a).array() += t.grad(Var{self}).array() * (S(1) - y.array().square());
  });
}

template <typename S>
Var sigmoid(Tape<S>& t, Var a) {
  Matrix<S> y = (S(1) + (-t.value(a).array()).exp()).inverse();
  return t.push(std::move(y), t.needs_grad(a), [a](Tape<S>& t, int self) {
    const auto& y = t.value(Var{self});
    t.grad(a).array() += t.grad(Var{self}).array() * y.array() * (S(1) - y.array());
  });
}

template <typename S>
Var softmax_rows(Tape<S>& t, Var a) {
  return t.push(softmax_row_kernel(t.value(a)), t.needs_grad(a), [a](Tape<S>& t, int self) {
    const auto& y = t.value(Var{self});
    const auto& g = t.grad(Var{self});
    auto& ga = t.grad(a);
    for (int r = 0; r < y.rows(); ++r) {
      const S dot = (g.row(r).array() * y.row(r).array()).sum();
      ga.row(r).array() += y.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

template <typename S>
Var log_softmax_rows(Tape<S>& t, Var a) {
  return t.push(log_softmax_row_kernel(t.value(a)), t.needs_grad(a),
                [a](Tape<S>& t, int self) {
                  const auto& y = t.value(Var{self});
                  const auto& g = t.grad(Var{self});
                  auto& ga = t.grad(a);
                  for (int r = 0; r < y.rows(); ++r) {
                    const S total = g.row(r).sum();
                    ga.row(r).array() += g.row(r).array() - y.row(r).array().exp() * total;
                  }
                });
}

template <typename S>
Var sum_all(Tape<S>& t, Var a) {
  Matrix<S> y(1, 1);
  y(0, 0) = t.value(a).sum();
  return t.push(std::move(y), t.needs_grad(a), [a](Tape<S>& t, int self) {
    t.grad(a).array() += t.grad(Var{self})(0, 0);
  });
}

template <typename S>
Var embedding(Tape<S>& t, Var table, int id) {
  require(id >= 0 && id < t.value(table).rows(), "embedding: id out of range");
  Matrix<S> y = t.value(table).row(id);
  return t.push(std::move(y), t.needs_grad(table), [table, id](Tape<S>& t, int self) {
    t.grad(table).row(id) += t.grad(Var{self});
  });
}

template <typename S>
Var dropout(Tape<S>& t, Var x, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw UsageError("dropout rate must be in [0, 1)");
  }
  if (rate == 0.0) {
    return x;
  }
  const auto& X = t.value(x);
  auto mask = std::make_shared<Matrix<S>>(X.rows(), X.cols());
  const S keep_scale = S(1.0 / (1.0 - rate));
  for (int i = 0; i < X.rows(); ++i) {
    for (int j = 0; j < X.cols(); ++j) {
      (*mask)(i, j) = uniform01(rng) < rate ? S(0) : keep_scale;
    }
  }
  Matrix<S> y = X.cwiseProduct(*mask);
  return t.push(std::move(y), t.needs_grad(x), [x, mask](Tape<S>& t, int self) {
    t.grad(x) += t.grad(Var{self}).cwiseProduct(*mask);
  });
}

// --- sequence ops ----------------------------------------------------------------

template <typename S>
Var maxpool_time(Tape<S>& t, Var x, int factor) {
  if (factor < 1) {
    throw UsageError("maxpool factor must be >= 1");
  }
  if (factor == 1) {
    return x;
  }
  const auto& X = t.value(x);
  Matrix<S> y = maxpool_kernel(X, factor);
  // Row index of the max for every output cell.
  auto arg = std::make_shared<Eigen::MatrixXi>(y.rows(), y.cols());
  for (int o = 0; o < y.rows(); ++o) {
    const int lo = o * factor;
    const int n = std::min(factor, static_cast<int>(X.rows()) - lo);
    for (int c = 0; c < y.cols(); ++c) {
      int best = lo;
      for (int r = lo + 1; r < lo + n; ++r) {
        if (X(r, c) > X(best, c)) best = r;
      }
      (*arg)(o, c) = best;
    }
  }
  return t.push(std::move(y), t.needs_grad(x), [x, arg](Tape<S>& t, int self) {
    const auto& g = t.grad(Var{self});
    auto& gx = t.grad(x);
    for (int o = 0; o < g.rows(); ++o) {
      for (int c = 0; c < g.cols(); ++c) {
        gx((*arg)(o, c), c) += g(o, c);
      }
    }
  });
}

namespace {

template <typename S>
struct LstmCache {
  Matrix<S> gates;   // T x 4H post-activation
  Matrix<S> cells;   // T x H
  Matrix<S> h_prev;  // T x H, state entering each step
  Matrix<S> c_prev;  // T x H
};

}  // namespace

template <typename S>
LstmOutputs<S> lstm_layer(Tape<S>& t, Var x, const LstmParams<S>& p, Var h0,
                          Var c0, bool reverse) {
  const auto& X = t.value(x);
  const auto& Wx = t.value(p.w_input);
  const auto& Wh = t.value(p.w_recurrent);
  const auto& B = t.value(p.bias);
  const int hdim = static_cast<int>(Wh.cols());
  const int num_t = static_cast<int>(X.rows());
  if (Wx.rows() != 4 * hdim || Wh.rows() != 4 * hdim || Wx.cols() != X.cols() ||
      B.rows() != 1 || B.cols() != 4 * hdim || t.value(h0).cols() != hdim ||
      t.value(c0).cols() != hdim) {
    throw UsageError("lstm: parameter shapes inconsistent with d_in=" +
                     std::to_string(X.cols()) + ", d_h=" + std::to_string(hdim));
  }

  auto cache = std::make_shared<LstmCache<S>>();
  cache->gates.resize(num_t, 4 * hdim);
  cache->cells.resize(num_t, hdim);
  cache->h_prev.resize(num_t, hdim);
  cache->c_prev.resize(num_t, hdim);
  Matrix<S> out(num_t, hdim);

  Matrix<S> zx = X * Wx.transpose();
  zx.rowwise() += B.row(0);
  Matrix<S> h = t.value(h0);
  Matrix<S> c = t.value(c0);
  Matrix<S> z(1, 4 * hdim), gates, c_next, h_next;
  for (int k = 0; k < num_t; ++k) {
    const int tt = reverse ? num_t - 1 - k : k;
    cache->h_prev.row(tt) = h;
    cache->c_prev.row(tt) = c;
    z.noalias() = zx.row(tt) + h * Wh.transpose();
    lstm_cell_kernel(z, c, gates, c_next, h_next);
    cache->gates.row(tt) = gates;
    cache->cells.row(tt) = c_next;
    out.row(tt) = h_next;
    h = h_next;
    c = c_next;
  }

  const bool needs = any_needs(t, {x, p.w_input, p.w_recurrent, p.bias, h0, c0});
  const Var outputs = t.push(
      std::move(out), needs,
      [x, p, h0, c0, cache, reverse, hdim, num_t](Tape<S>& t, int self) {
        const Var final_c{self + 1};
        Matrix<S> dz = Matrix<S>::Zero(num_t, 4 * hdim);
        Matrix<S> dh_next = Matrix<S>::Zero(1, hdim);
        Matrix<S> dc_next = t.has_grad(final_c) ? Matrix<S>(t.grad(final_c))
                                                : Matrix<S>::Zero(1, hdim);
        const Matrix<S>& dout = t.grad(Var{self});
        const auto& Wh = t.value(p.w_recurrent);
        for (int k = num_t - 1; k >= 0; --k) {
          const int tt = reverse ? num_t - 1 - k : k;
          const auto gi = cache->gates.row(tt).segment(0, hdim).array();
          const auto gf = cache->gates.row(tt).segment(hdim, hdim).array();
          const auto gg = cache->gates.row(tt).segment(2 * hdim, hdim).array();
          const auto go = cache->gates.row(tt).segment(3 * hdim, hdim).array();
          const Eigen::Array<S, 1, Eigen::Dynamic> tc = cache->cells.row(tt).array().tanh();
          const Eigen::Array<S, 1, Eigen::Dynamic> dh = dh_next.array() + dout.row(tt).array();
          const Eigen::Array<S, 1, Eigen::Dynamic> dc =
              dc_next.array() + dh * go * (S(1) - tc.square());
          dz.row(tt).segment(0, hdim) = (dc * gg * gi * (S(1) - gi)).matrix();
          dz.row(tt).segment(hdim, hdim) =
              (dc * cache->c_prev.row(tt).array() * gf * (S(1) - gf)).matrix();
          dz.row(tt).segment(2 * hdim, hdim) = (dc * gi * (S(1) - gg.square())).matrix();
          dz.row(tt).segment(3 * hdim, hdim) = (dh * tc * go * (S(1) - go)).matrix();
          dc_next = (dc * gf).matrix();
          dh_next.noalias() = dz.row(tt) * Wh;
        }
        if (t.needs_grad(x)) t.grad(x).noalias() += dz * t.value(p.w_input);
        if (t.needs_grad(p.w_input))
          t.grad(p.w_input).noalias() += dz.transpose() * t.value(x);
        if (t.needs_grad(p.w_recurrent))
          t.grad(p.w_recurrent).noalias() += dz.transpose() * cache->h_prev;
        if (t.needs_grad(p.bias)) t.grad(p.bias) += dz.colwise().sum();
        if (t.needs_grad(h0)) t.grad(h0) += dh_next;
        if (t.needs_grad(c0)) t.grad(c0) += dc_next;
      });
  // Final cell state rides on the layer's closure; its own closure only
  // makes sure that closure runs when just the cell state carries gradient.
  const Var final_c = t.push(c, needs, [](Tape<S>& t, int self) {
    t.grad(Var{self - 1});
  });
  return {outputs, final_c};
}

template <typename S>
LstmCellResult lstm_cell(Tape<S>& t, Var x, Var h, Var c, const LstmParams<S>& p) {
  require(t.value(x).rows() == 1, "lstm_cell: input must be a single row");
  auto out = lstm_layer(t, x, p, h, c, false);
  return {out.outputs, out.final_c};
}

template <typename S>
Var additive_energy(Tape<S>& t, Var keys, Var query, Var v) {
  const auto& K = t.value(keys);
  const auto& Q = t.value(query);
  const auto& V = t.value(v);
  require(Q.rows() == 1 && V.rows() == 1 && Q.cols() == K.cols() && V.cols() == K.cols(),
          "additive_energy: shape mismatch");
  auto hidden = std::make_shared<Matrix<S>>(K);
  hidden->rowwise() += Q.row(0);
  *hidden = hidden->array().tanh().matrix();
  Matrix<S> e = (*hidden * V.transpose()).transpose();
  return t.push(std::move(e), any_needs(t, {keys, query, v}),
                [keys, query, v, hidden](Tape<S>& t, int self) {
                  const auto& g = t.grad(Var{self});  // 1 x T
                  if (t.needs_grad(v)) t.grad(v).noalias() += g * (*hidden);
                  Matrix<S> dpre = (g.transpose() * t.value(v)).array() *
                                   (S(1) - hidden->array().square());
                  if (t.needs_grad(keys)) t.grad(keys) += dpre;
                  if (t.needs_grad(query)) t.grad(query) += dpre.colwise().sum();
                });
}

template <typename S>
Var monotonic_alignment(Tape<S>& t, Var p, Var prev) {
  Matrix<S> alpha = monotonic_alignment_kernel(t.value(p), t.value(prev));
  return t.push(std::move(alpha), any_needs(t, {p, prev}), [p, prev](Tape<S>& t, int self) {
    const auto& P = t.value(p);
    const auto& A0 = t.value(prev);
    const auto& g = t.grad(Var{self});
    const int num_t = static_cast<int>(P.cols());
    // Recompute q_j.
    std::vector<S> q(num_t + 1, S(0));
    for (int j = 1; j <= num_t; ++j) {
      q[j] = j == 1 ? A0(0, 0) : (S(1) - P(0, j - 2)) * q[j - 1] + A0(0, j - 1);
    }
    Matrix<S> dp = Matrix<S>::Zero(1, num_t);
    Matrix<S> dprev = Matrix<S>::Zero(1, num_t + 1);
    S dq_next = 0;
    for (int j = num_t; j >= 1; --j) {
      S dq = g(0, j) * P(0, j - 1);
      S dpj = g(0, j) * q[j];
      if (j < num_t) {
        dq += dq_next * (S(1) - P(0, j - 1));
        dpj -= dq_next * q[j];
      }
      dp(0, j - 1) = dpj;
      dprev(0, j - 1) += dq;
      dq_next = dq;
    }
    if (t.needs_grad(p)) t.grad(p) += dp;
    if (t.needs_grad(prev)) t.grad(prev) += dprev;
  });
}

template <typename S>
Var chunk_attention(Tape<S>& t, Var alpha, Var u, int width) {
  Matrix<S> beta = chunk_attention_kernel(t.value(alpha), t.value(u), width);
  return t.push(std::move(beta), any_needs(t, {alpha, u}),
                [alpha, u, width](Tape<S>& t, int self) {
                  const auto& A = t.value(alpha);
                  const auto& U = t.value(u);
                  const auto& g = t.grad(Var{self});
                  const int num_t = static_cast<int>(U.cols());
                  Matrix<S> dalpha = Matrix<S>::Zero(1, num_t + 1);
                  Matrix<S> du = Matrix<S>::Zero(1, num_t);
                  for (int j = 1; j <= num_t; ++j) {
                    const Matrix<S> s = window_softmax(U, j, width);
                    const S gs = (g.array() * s.array()).sum();
                    dalpha(0, j) = gs;
                    du.array() += A(0, j) * s.array() * (g.array() - gs);
                  }
                  if (t.needs_grad(alpha)) t.grad(alpha) += dalpha;
                  if (t.needs_grad(u)) t.grad(u) += du;
                });
}

// --- explicit instantiations --------------------------------------------------

#define LRASR_INSTANTIATE(S)                                                          \
  template class Tape<S>;                                                             \
  template Var matmul<S>(Tape<S>&, Var, Var);                                         \
  template Var affine<S>(Tape<S>&, Var, Var, Var);                                    \
  template Var add<S>(Tape<S>&, Var, Var);                                            \
  template Var add_scalar<S>(Tape<S>&, Var, S);                                       \
  template Var scale<S>(Tape<S>&, Var, S);                                            \
  template Var add_const<S>(Tape<S>&, Var, const Matrix<S>&);                         \
  template Var concat_cols<S>(Tape<S>&, Var, Var);                                    \
  template Var stack_rows<S>(Tape<S>&, std::span<const Var>);                         \
  template Var row<S>(Tape<S>&, Var, int);                                            \
  template Var tanh<S>(Tape<S>&, Var);                                                \
  template Var sigmoid<S>(Tape<S>&, Var);                                             \
  template Var softmax_rows<S>(Tape<S>&, Var);                                        \
  template Var log_softmax_rows<S>(Tape<S>&, Var);                                    \
  template Var sum_all<S>(Tape<S>&, Var);                                             \
  template Var embedding<S>(Tape<S>&, Var, int);                                      \
  template Var dropout<S>(Tape<S>&, Var, double, Rng&);                               \
  template Var maxpool_time<S>(Tape<S>&, Var, int);                                   \
  template LstmOutputs<S> lstm_layer<S>(Tape<S>&, Var, const LstmParams<S>&, Var, Var, \
                                        bool);                                        \
  template LstmCellResult lstm_cell<S>(Tape<S>&, Var, Var, Var, const LstmParams<S>&); \
  template Var additive_energy<S>(Tape<S>&, Var, Var, Var);                           \
  template Var monotonic_alignment<S>(Tape<S>&, Var, Var);                            \
  template Var chunk_attention<S>(Tape<S>&, Var, Var, int);                           \
  template void lstm_cell_kernel<S>(const Matrix<S>&, const Matrix<S>&, Matrix<S>&,   \
                                    Matrix<S>&, Matrix<S>&);                          \
  template Matrix<S> maxpool_kernel<S>(const Matrix<S>&, int);                        \
  template Matrix<S> monotonic_alignment_kernel<S>(const Matrix<S>&, const Matrix<S>&); \
  template Matrix<S> chunk_attention_kernel<S>(const Matrix<S>&, const Matrix<S>&, int); \
  template Matrix<S> window_softmax<S>(const Matrix<S>&, int, int);                   \
  template Matrix<S> softmax_row_kernel<S>(const Matrix<S>&);                         \
  template Matrix<S> log_softmax_row_kernel<S>(const Matrix<S>&);

LRASR_INSTANTIATE(float)
LRASR_INSTANTIATE(double)

#undef LRASR_INSTANTIATE

}  // namespace lrasr::nn
