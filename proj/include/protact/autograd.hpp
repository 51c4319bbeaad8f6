#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Var is a shared handle to a graph node holding a value, an accumulated
// gradient and a closure that pushes the node's gradient to its parents.
// Graphs are rebuilt on every forward pass and freed when the last handle
// goes away; parameters are long-lived leaves.

#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace protact::ag {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
  void zero_grad() { grad.resize(0, 0); }
};

inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

// Disables graph recording in scope (evaluation mode).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  const Matrix& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  bool requires_grad() const { return node_->requires_grad; }
  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }
  void zero_grad() { node_->zero_grad(); }

 private:
  std::shared_ptr<Node> node_;
};

inline Var constant(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

inline Var parameter(Matrix value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

namespace detail {

inline void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("autograd shape error: ") + what);
}

// Creates a result node; records parents and the backward closure only when
// some parent needs a gradient and recording is enabled.
inline Var make(Matrix value, std::vector<Var> parents, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  if (grad_enabled()) {
    for (const auto& p : parents) {
      if (p.requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
  }
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.ptr());
    n->backward = std::move(backward);
  }
  return Var(std::move(n));
}

}  // namespace detail

// Runs reverse accumulation from `root`, seeding its gradient with `seed`.
inline void backward(const Var& root, const Matrix& seed) {
  if (!root.requires_grad()) return;
  detail::check(seed.rows() == root.rows() && seed.cols() == root.cols(), "backward seed");
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
  visited.insert(root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && p->backward && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root.node()->accumulate(seed);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
  // Intermediate gradients are no longer needed; leaves keep theirs.
  for (Node* n : order) {
    if (n->backward) n->zero_grad();
  }
}

inline void backward(const Var& scalar_root) {
  backward(scalar_root, Matrix::Ones(scalar_root.rows(), scalar_root.cols()));
}

// ---------------------------------------------------------------- basic ops

inline Var matmul(const Var& a, const Var& b) {
  detail::check(a.cols() == b.rows(), "matmul");
  return detail::make(a.value() * b.value(), {a, b}, [a, b](Node& self) {
    a.node()->accumulate(self.grad * b.value().transpose());
    b.node()->accumulate(a.value().transpose() * self.grad);
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  return detail::make(a.value() + b.value(), {a, b}, [a, b](Node& self) {
    a.node()->accumulate(self.grad);
    b.node()->accumulate(self.grad);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "sub");
  return detail::make(a.value() - b.value(), {a, b}, [a, b](Node& self) {
    a.node()->accumulate(self.grad);
    b.node()->accumulate(-self.grad);
  });
}

// a + broadcast(row) over every row of a.
inline Var add_row(const Var& a, const Var& row) {
  detail::check(row.rows() == 1 && row.cols() == a.cols(), "add_row");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return detail::make(std::move(out), {a, row}, [a, row](Node& self) {
    a.node()->accumulate(self.grad);
    row.node()->accumulate(self.grad.colwise().sum());
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::check(a.rows() == b.rows() && a.cols() == b.cols(), "mul");
  return detail::make(a.value().cwiseProduct(b.value()), {a, b}, [a, b](Node& self) {
    a.node()->accumulate(self.grad.cwiseProduct(b.value()));
    b.node()->accumulate(self.grad.cwiseProduct(a.value()));
  });
}

// Elementwise product with a constant matrix (dropout masks).
inline Var mul_const(const Var& a, Matrix c) {
  detail::check(a.rows() == c.rows() && a.cols() == c.cols(), "mul_const");
  Matrix out = a.value().cwiseProduct(c);
  return detail::make(std::move(out), {a}, [a, c = std::move(c)](Node& self) {
    a.node()->accumulate(self.grad.cwiseProduct(c));
  });
}

inline Var scale(const Var& a, double s) {
  return detail::make(a.value() * s, {a}, [a, s](Node& self) { a.node()->accumulate(self.grad * s); });
}

inline Var tanh(const Var& a) {
  return detail::make(a.value().array().tanh().matrix(), {a}, [a](Node& self) {
    a.node()->accumulate(self.grad.cwiseProduct((1.0 - self.value.array().square()).matrix()));
  });
}

inline Matrix sigmoid_values(const Matrix& x) {
  return x.unaryExpr([](double v) {
    if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  });
}

inline Var sigmoid(const Var& a) {
  return detail::make(sigmoid_values(a.value()), {a}, [a](Node& self) {
    const auto& y = self.value;
    a.node()->accumulate(self.grad.cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

inline Var relu(const Var& a) {
  Matrix y = a.value().cwiseMax(0.0);
  return detail::make(y, {a}, [a](Node& self) {
    Matrix g = (a.value().array() > 0.0).select(self.grad, 0.0);
    a.node()->accumulate(g);
  });
}

inline Var transpose(const Var& a) {
  return detail::make(a.value().transpose(), {a},
                      [a](Node& self) { a.node()->accumulate(self.grad.transpose()); });
}

// Row sums: [r x c] -> [r x 1].
inline Var row_sums(const Var& a) {
  return detail::make(a.value().rowwise().sum(), {a}, [a](Node& self) {
    a.node()->accumulate(self.grad.replicate(1, a.cols()));
  });
}

// Softmax over each row. `allowed` (same shape, 0/1) excludes entries: they
// receive weight 0. Rows with nothing allowed come out all-zero.
inline Matrix softmax_rows_values(const Matrix& x, const Matrix* allowed) {
  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (allowed && (*allowed)(r, c) == 0.0) continue;
      mx = std::max(mx, x(r, c));
    }
    if (!std::isfinite(mx)) continue;
    double sum = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (allowed && (*allowed)(r, c) == 0.0) continue;
      y(r, c) = std::exp(x(r, c) - mx);
      sum += y(r, c);
    }
    y.row(r) /= sum;
  }
  return y;
}

inline Var softmax_rows(const Var& a, const Matrix* allowed = nullptr) {
  if (allowed) detail::check(allowed->rows() == a.rows() && allowed->cols() == a.cols(), "softmax mask");
  return detail::make(softmax_rows_values(a.value(), allowed), {a}, [a](Node& self) {
    const auto& y = self.value;
    Eigen::VectorXd dots = self.grad.cwiseProduct(y).rowwise().sum();
    Matrix g = y.cwiseProduct(self.grad - dots.replicate(1, y.cols()));
    a.node()->accumulate(g);
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  detail::check(!parts.empty(), "concat_cols empty");
  const auto rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    detail::check(p.rows() == rows, "concat_cols rows");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return detail::make(std::move(out), parts, [parts](Node& self) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) p.node()->accumulate(self.grad.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  detail::check(!parts.empty(), "concat_rows empty");
  const auto cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    detail::check(p.cols() == cols, "concat_rows cols");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return detail::make(std::move(out), parts, [parts](Node& self) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) p.node()->accumulate(self.grad.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

inline Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index n) {
  detail::check(start >= 0 && n >= 0 && start + n <= a.rows(), "slice_rows");
  return detail::make(a.value().middleRows(start, n), {a}, [a, start, n](Node& self) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    g.middleRows(start, n) = self.grad;
    a.node()->accumulate(g);
  });
}

inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n) {
  detail::check(start >= 0 && n >= 0 && start + n <= a.cols(), "slice_cols");
  return detail::make(a.value().middleCols(start, n), {a}, [a, start, n](Node& self) {
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    g.middleCols(start, n) = self.grad;
    a.node()->accumulate(g);
  });
}

// Embedding lookup. Row 0 (padding) never receives gradient.
inline Var gather_rows(const Var& table, std::vector<int> ids) {
  Matrix out(static_cast<Eigen::Index>(ids.size()), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::check(ids[i] >= 0 && ids[i] < table.rows(), "gather_rows id");
    out.row(static_cast<Eigen::Index>(i)) = table.value().row(ids[i]);
  }
  return detail::make(std::move(out), {table}, [table, ids = std::move(ids)](Node& self) {
    Matrix g = Matrix::Zero(table.rows(), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] == 0) continue;
      g.row(ids[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    }
    table.node()->accumulate(g);
  });
}

// ------------------------------------------------------- sequence operators

// Number of output positions of a zero-tail-padded convolution over a
// segment of `len` tokens: one per token, and one for an empty segment.
inline Eigen::Index conv_positions(int len) { return std::max(len, 1); }

// Convolution windows. `x` stacks the tokens of consecutive segments
// (lengths in `lengths`). Output row p of segment s holds tokens
// [p, p + width) of that segment laid side by side, zero past its end.
inline Var unfold_windows(const Var& x, std::vector<int> lengths, int width) {
  const Eigen::Index d = x.cols();
  Eigen::Index positions = 0;
  Eigen::Index tokens = 0;
  for (int len : lengths) {
    positions += conv_positions(len);
    tokens += len;
  }
  detail::check(tokens == x.rows(), "unfold_windows token count");
  Matrix out = Matrix::Zero(positions, width * d);
  Eigen::Index row = 0, base = 0;
  for (int len : lengths) {
    for (Eigen::Index p = 0; p < conv_positions(len); ++p, ++row) {
      for (int k = 0; k < width && p + k < len; ++k) {
        out.block(row, k * d, 1, d) = x.value().row(base + p + k);
      }
    }
    base += len;
  }
  return detail::make(std::move(out), {x}, [x, lengths = std::move(lengths), width](Node& self) {
    const Eigen::Index d = x.cols();
    Matrix g = Matrix::Zero(x.rows(), d);
    Eigen::Index row = 0, base = 0;
    for (int len : lengths) {
      for (Eigen::Index p = 0; p < conv_positions(len); ++p, ++row) {
        for (int k = 0; k < width && p + k < len; ++k) g.row(base + p + k) += self.grad.block(row, k * d, 1, d);
      }
      base += len;
    }
    x.node()->accumulate(g);
  });
}

// Softmax of a score column within each segment.
inline Var segment_softmax(const Var& scores, std::vector<Eigen::Index> lengths) {
  detail::check(scores.cols() == 1, "segment_softmax expects a column");
  Matrix y(scores.rows(), 1);
  Eigen::Index off = 0;
  for (auto len : lengths) {
    detail::check(len >= 1, "segment_softmax empty segment");
    auto seg = scores.value().middleRows(off, len);
    const double mx = seg.maxCoeff();
    Matrix e = (seg.array() - mx).exp().matrix();
    y.middleRows(off, len) = e / e.sum();
    off += len;
  }
  detail::check(off == scores.rows(), "segment_softmax length sum");
  return detail::make(std::move(y), {scores}, [scores, lengths = std::move(lengths)](Node& self) {
    const auto& y = self.value;
    Matrix g(y.rows(), 1);
    Eigen::Index off = 0;
    for (auto len : lengths) {
      auto yy = y.middleRows(off, len);
      auto gg = self.grad.middleRows(off, len);
      const double dot = yy.cwiseProduct(gg).sum();
      g.middleRows(off, len) = yy.cwiseProduct((gg.array() - dot).matrix());
      off += len;
    }
    scores.node()->accumulate(g);
  });
}

// out[s] = sum over rows p of segment s of weights[p] * values[p].
inline Var segment_weighted_sum(const Var& weights, const Var& values, std::vector<Eigen::Index> lengths) {
  detail::check(weights.cols() == 1 && weights.rows() == values.rows(), "segment_weighted_sum");
  Matrix out(static_cast<Eigen::Index>(lengths.size()), values.cols());
  Eigen::Index off = 0;
  for (std::size_t s = 0; s < lengths.size(); ++s) {
    const auto len = lengths[s];
    out.row(static_cast<Eigen::Index>(s)) =
        weights.value().middleRows(off, len).transpose() * values.value().middleRows(off, len);
    off += len;
  }
  detail::check(off == values.rows(), "segment_weighted_sum length sum");
  return detail::make(std::move(out), {weights, values},
                      [weights, values, lengths = std::move(lengths)](Node& self) {
                        Matrix gw(weights.rows(), 1);
                        Matrix gv(values.rows(), values.cols());
                        Eigen::Index off = 0;
                        for (std::size_t s = 0; s < lengths.size(); ++s) {
                          const auto len = lengths[s];
                          const auto gs = self.grad.row(static_cast<Eigen::Index>(s));
                          gw.middleRows(off, len) = values.value().middleRows(off, len) * gs.transpose();
                          gv.middleRows(off, len) = weights.value().middleRows(off, len) * gs;
                          off += len;
                        }
                        weights.node()->accumulate(gw);
                        values.node()->accumulate(gv);
                      });
}

// Single-layer LSTM with zero initial state, gate blocks ordered
// [input, forget, candidate, output]. x: [T x in], w: [in x 4H],
// u: [H x 4H], b: [1 x 4H]. Returns the hidden states [T x H].
inline Var lstm(const Var& x, const Var& w, const Var& u, const Var& b) {
  const Eigen::Index T = x.rows();
  const Eigen::Index H = u.rows();
  detail::check(T >= 1, "lstm needs at least one step");
  detail::check(w.rows() == x.cols() && w.cols() == 4 * H && u.cols() == 4 * H && b.rows() == 1 &&
                    b.cols() == 4 * H,
                "lstm weights");
  Matrix xw = (x.value() * w.value()).rowwise() + b.value().row(0);
  Matrix gates(T, 4 * H);  // post-activation i, f, g, o
  Matrix cells(T, H);
  Matrix hidden(T, H);
  RowVector h = RowVector::Zero(H);
  RowVector c = RowVector::Zero(H);
  for (Eigen::Index t = 0; t < T; ++t) {
    RowVector z = xw.row(t) + h * u.value();
    RowVector i = sigmoid_values(z.segment(0, H));
    RowVector f = sigmoid_values(z.segment(H, H));
    RowVector g = z.segment(2 * H, H).array().tanh().matrix();
    RowVector o = sigmoid_values(z.segment(3 * H, H));
    c = f.cwiseProduct(c) + i.cwiseProduct(g);
    h = o.cwiseProduct(c.array().tanh().matrix());
    gates.row(t) << i, f, g, o;
    cells.row(t) = c;
    hidden.row(t) = h;
  }
  return detail::make(hidden, {x, w, u, b}, [x, w, u, b, gates, cells, T, H](Node& self) {
    const auto& hidden = self.value;
    Matrix dz(T, 4 * H);
    RowVector dh_next = RowVector::Zero(H);
    RowVector dc_next = RowVector::Zero(H);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      RowVector i = gates.row(t).segment(0, H);
      RowVector f = gates.row(t).segment(H, H);
      RowVector g = gates.row(t).segment(2 * H, H);
      RowVector o = gates.row(t).segment(3 * H, H);
      RowVector tc = cells.row(t).array().tanh().matrix();
      RowVector c_prev = t > 0 ? RowVector(cells.row(t - 1)) : RowVector::Zero(H);
      RowVector dh = self.grad.row(t) + dh_next;
      RowVector dout = dh.cwiseProduct(tc);
      RowVector dc = dh.cwiseProduct(o).cwiseProduct((1.0 - tc.array().square()).matrix()) + dc_next;
      RowVector di = dc.cwiseProduct(g);
      RowVector dg = dc.cwiseProduct(i);
      RowVector df = dc.cwiseProduct(c_prev);
      dc_next = dc.cwiseProduct(f);
      dz.row(t) << di.cwiseProduct((i.array() * (1.0 - i.array())).matrix()),
          df.cwiseProduct((f.array() * (1.0 - f.array())).matrix()),
          dg.cwiseProduct((1.0 - g.array().square()).matrix()),
          dout.cwiseProduct((o.array() * (1.0 - o.array())).matrix());
      dh_next = dz.row(t) * u.value().transpose();
    }
    Matrix h_prev = Matrix::Zero(T, H);
    if (T > 1) h_prev.bottomRows(T - 1) = hidden.topRows(T - 1);
    x.node()->accumulate(dz * w.value().transpose());
    w.node()->accumulate(x.value().transpose() * dz);
    u.node()->accumulate(h_prev.transpose() * dz);
    b.node()->accumulate(dz.colwise().sum());
  });
}

}  // namespace protact::ag
