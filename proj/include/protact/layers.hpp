#pragma once

// Parameter blocks and forward functions for the network's building blocks:
// 1-D convolution, attention pooling, multi-head scaled dot-product
// attention and LSTM.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/QR>

#include "autograd.hpp"
#include "random.hpp"

namespace protact {

using ag::Matrix;
using ag::Var;

// Records every normalized attention weight vector produced in a forward
// pass, one distribution per row.
struct AttentionTrace {
  std::vector<Matrix> weights;
};

// Named registry of learnable tensors in creation order.
class ParamStore {
 public:
  Var add(const std::string& name, Matrix init) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    index_.emplace(name, names_.size());
    names_.push_back(name);
    params_.push_back(ag::parameter(std::move(init)));
    return params_.back();
  }

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<Var>& params() const { return params_; }
  std::size_t size() const { return params_.size(); }

  Var get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter " + name);
    return params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value().size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<std::string> names_;
  std::vector<Var> params_;
  std::map<std::string, std::size_t> index_;
};

namespace init {

inline Matrix glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols, double fan_in, double fan_out) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  return m;
}

inline Matrix glorot(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  return glorot(rng, rows, cols, static_cast<double>(rows), static_cast<double>(cols));
}

inline Matrix uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols, double limit) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
  return m;
}

// Orthogonal [rows x cols] matrix with orthonormal rows (rows <= cols).
inline Matrix orthogonal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
  Matrix a(cols, rows);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(cols, rows);
  Matrix r = qr.matrixQR().topRows(rows).triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (r(i, i) < 0) q.col(i) *= -1.0;
  }
  return q.transpose();
}

}  // namespace init

enum class Activation { linear, relu, tanh };

inline Var activate(const Var& x, Activation a) {
  switch (a) {
    case Activation::relu: return ag::relu(x);
    case Activation::tanh: return ag::tanh(x);
    case Activation::linear: break;
  }
  return x;
}

struct ConvParams {
  Var w;  // [kernel * in_dim x filters]
  Var b;  // [1 x filters]
  int kernel = 0;

  static ConvParams create(ParamStore& store, Rng& rng, const std::string& name, int in_dim, int filters,
                           int kernel) {
    return {store.add(name + ".w", init::glorot(rng, kernel * in_dim, filters, kernel * in_dim, kernel * filters)),
            store.add(name + ".b", Matrix::Zero(1, filters)), kernel};
  }
};

// Windowed convolution over each segment of token rows; returns one row per
// conv position (see ag::conv_positions).
inline Var conv1d(const Var& tokens, const std::vector<int>& lengths, const ConvParams& p, Activation act) {
  Var windows = ag::unfold_windows(tokens, lengths, p.kernel);
  return activate(ag::add_row(ag::matmul(windows, p.w), p.b), act);
}

struct PoolParams {
  Var w;    // [d x d]
  Var b;    // [1 x d]
  Var w_u;  // [d x 1]

  static PoolParams create(ParamStore& store, Rng& rng, const std::string& name, int dim) {
    return {store.add(name + ".w", init::glorot(rng, dim, dim)), store.add(name + ".b", Matrix::Zero(1, dim)),
            store.add(name + ".u", init::glorot(rng, dim, 1))};
  }
};

// a_i = tanh(W c_i + b), u = softmax(w_u . a), s = sum u_i c_i, per segment.
inline Var attention_pool(const Var& rows, const std::vector<Eigen::Index>& segments, const PoolParams& p,
                          AttentionTrace* trace) {
  Var a = ag::tanh(ag::add_row(ag::matmul(rows, p.w), p.b));
  Var weights = ag::segment_softmax(ag::matmul(a, p.w_u), segments);
  if (trace) {
    Eigen::Index off = 0;
    for (auto len : segments) {
      trace->weights.push_back(weights.value().middleRows(off, len).transpose());
      off += len;
    }
  }
  return ag::segment_weighted_sum(weights, rows, segments);
}

inline Var attention_pool(const Var& rows, const PoolParams& p, AttentionTrace* trace) {
  return attention_pool(rows, {rows.rows()}, p, trace);
}

struct MultiHeadParams {
  std::vector<Var> wq, wk, wv;  // per head [in x head_dim]
  Var wo;                       // [heads * head_dim x out]

  static MultiHeadParams create(ParamStore& store, Rng& rng, const std::string& name, int q_dim, int kv_dim,
                                int model_dim, int heads) {
    MultiHeadParams p;
    const int head_dim = model_dim / heads;
    for (int h = 0; h < heads; ++h) {
      const auto tag = name + ".h" + std::to_string(h);
      p.wq.push_back(store.add(tag + ".q", init::glorot(rng, q_dim, head_dim)));
      p.wk.push_back(store.add(tag + ".k", init::glorot(rng, kv_dim, head_dim)));
      p.wv.push_back(store.add(tag + ".v", init::glorot(rng, kv_dim, head_dim)));
    }
    p.wo = store.add(name + ".o", init::glorot(rng, heads * head_dim, model_dim));
    return p;
  }
};

// Concat_h(softmax(Q Wq_h (K Wk_h)^T / sqrt(d_h)) V Wv_h) Wo. Output has one
// row per query row.
inline Var multi_head_attention(const Var& q, const Var& k, const Var& v, const MultiHeadParams& p,
                                AttentionTrace* trace) {
  if (k.rows() == 0 || v.rows() == 0) throw std::invalid_argument("attention over zero-length keys");
  if (k.rows() != v.rows()) throw std::invalid_argument("attention key/value length mismatch");
  std::vector<Var> heads;
  heads.reserve(p.wq.size());
  for (std::size_t h = 0; h < p.wq.size(); ++h) {
    Var qh = ag::matmul(q, p.wq[h]);
    Var kh = ag::matmul(k, p.wk[h]);
    Var vh = ag::matmul(v, p.wv[h]);
    const double scale = 1.0 / std::sqrt(static_cast<double>(qh.cols()));
    Var weights = ag::softmax_rows(ag::scale(ag::matmul(qh, ag::transpose(kh)), scale));
    if (trace) trace->weights.push_back(weights.value());
    heads.push_back(ag::matmul(weights, vh));
  }
  return ag::matmul(heads.size() == 1 ? heads.front() : ag::concat_cols(heads), p.wo);
}

struct LstmParams {
  Var w;  // [in x 4H]
  Var u;  // [H x 4H]
  Var b;  // [1 x 4H]

  static LstmParams create(ParamStore& store, Rng& rng, const std::string& name, int in_dim, int units) {
    Matrix bias = Matrix::Zero(1, 4 * units);
    bias.block(0, units, 1, units).setOnes();  // forget gate starts open
    return {store.add(name + ".w", init::glorot(rng, in_dim, 4 * units)),
            store.add(name + ".u", init::orthogonal(rng, units, 4 * units)), store.add(name + ".b", bias)};
  }
};

inline Var lstm(const Var& x, const LstmParams& p) { return ag::lstm(x, p.w, p.u, p.b); }

}  // namespace protact
