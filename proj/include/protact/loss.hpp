#pragma once

// Masked MSE, trait-similarity loss and their interpolation. Each loss
// returns its value together with the gradient with respect to the
// prediction matrix, which is then pushed through the network.

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "errors.hpp"

namespace protact {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Similarity { pcc, cosine };

struct LossConfig {
  double delta = 0.7;
  double lambda = 0.7;
  Similarity criterion = Similarity::pcc;
  bool exclude_overall = true;  // trait column 0 is Overall
  bool use_ts_loss = true;
  bool global_gate = false;     // gate decided once on the full training set

  void validate() const {
    if (!(delta >= -1.0 && delta <= 1.0)) throw ConfigError("loss.delta must lie in [-1,1]");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("loss.lambda must lie in [0,1]");
  }
};

inline nlohmann::json to_json(const LossConfig& c) {
  return {{"delta", c.delta},
          {"lambda", c.lambda},
          {"criterion", c.criterion == Similarity::pcc ? "pcc" : "cosine"},
          {"exclude_overall", c.exclude_overall},
          {"use_ts_loss", c.use_ts_loss},
          {"global_gate", c.global_gate}};
}

inline void merge_json(LossConfig& c, const nlohmann::json& j) {
  if (j.contains("delta")) c.delta = j.at("delta").get<double>();
  if (j.contains("lambda")) c.lambda = j.at("lambda").get<double>();
  if (j.contains("criterion")) {
    const auto s = j.at("criterion").get<std::string>();
    if (s == "pcc") c.criterion = Similarity::pcc;
    else if (s == "cosine") c.criterion = Similarity::cosine;
    else throw ConfigError("loss.criterion must be pcc or cosine, got " + s);
  }
  if (j.contains("exclude_overall")) c.exclude_overall = j.at("exclude_overall").get<bool>();
  if (j.contains("use_ts_loss")) c.use_ts_loss = j.at("use_ts_loss").get<bool>();
  if (j.contains("global_gate")) c.global_gate = j.at("global_gate").get<bool>();
}

// Empty optional means undefined (zero variance or fewer than two points).
inline std::optional<double> pearson(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw std::invalid_argument("pearson: length mismatch");
  if (u.size() < 2) return std::nullopt;
  const Vector du = u.array() - u.mean();
  const Vector dv = v.array() - v.mean();
  const double den = std::sqrt(du.squaredNorm() * dv.squaredNorm());
  if (!(den > 0.0)) return std::nullopt;
  return std::clamp(du.dot(dv) / den, -1.0, 1.0);
}

inline std::optional<double> cosine(const Vector& u, const Vector& v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine: length mismatch");
  const double den = u.norm() * v.norm();
  if (!(den > 0.0)) return std::nullopt;
  return std::clamp(u.dot(v) / den, -1.0, 1.0);
}

inline std::optional<double> similarity(Similarity c, const Vector& u, const Vector& v) {
  return c == Similarity::pcc ? pearson(u, v) : cosine(u, v);
}

struct LossValue {
  double value = 0.0;
  Matrix grad;  // dL/dY_hat
};

inline void check_shapes(const Matrix& y, const Matrix& yhat, const Matrix& mask) {
  if (y.rows() != yhat.rows() || y.cols() != yhat.cols() || y.rows() != mask.rows() || y.cols() != mask.cols()) {
    throw std::invalid_argument("loss: Y, Y_hat and mask shapes differ");
  }
}

inline LossValue masked_mse(const Matrix& y, const Matrix& yhat, const Matrix& mask) {
  check_shapes(y, yhat, mask);
  const double n = static_cast<double>(y.size());
  if (n == 0) return {0.0, Matrix::Zero(y.rows(), y.cols())};
  const Matrix diff = yhat.cwiseProduct(mask) - y.cwiseProduct(mask);
  return {diff.squaredNorm() / n, (2.0 / n) * diff.cwiseProduct(mask)};
}

// Rows where both traits are rated.
inline std::vector<Eigen::Index> co_rated_rows(const Matrix& mask, Eigen::Index j, Eigen::Index k) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < mask.rows(); ++i) {
    if (mask(i, j) != 0.0 && mask(i, k) != 0.0) rows.push_back(i);
  }
  return rows;
}

inline Vector gather(const Matrix& m, const std::vector<Eigen::Index>& rows, Eigen::Index col) {
  Vector v(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) v(static_cast<Eigen::Index>(r)) = m(rows[r], col);
  return v;
}

// [M x M] 0/1 matrix marking trait pairs whose gold similarity over all
// co-rated rows reaches delta.
inline Matrix trait_gate(const Matrix& y, const Matrix& mask, const LossConfig& cfg) {
  const Eigen::Index m = y.cols();
  Matrix gate = Matrix::Zero(m, m);
  const Eigen::Index first = cfg.exclude_overall ? 1 : 0;
  for (Eigen::Index j = first; j < m; ++j) {
    for (Eigen::Index k = j + 1; k < m; ++k) {
      const auto rows = co_rated_rows(mask, j, k);
      if (rows.size() < 2) continue;
      const auto s = similarity(cfg.criterion, gather(y, rows, j), gather(y, rows, k));
      if (s && *s >= cfg.delta) gate(j, k) = gate(k, j) = 1.0;
    }
  }
  return gate;
}

struct TsValue {
  double value = 0.0;
  Matrix grad;
  int terms = 0;  // the divisor c
};

// Sum over gated pairs of 1 - cos(y_hat_j, y_hat_k) on co-rated rows,
// divided by the number of nonzero terms. `fixed_gate` replaces the
// per-batch gold similarity test when given.
inline TsValue trait_similarity_loss(const Matrix& y, const Matrix& yhat, const Matrix& mask, const LossConfig& cfg,
                                     const Matrix* fixed_gate = nullptr) {
  check_shapes(y, yhat, mask);
  const Eigen::Index m = y.cols();
  TsValue out;
  out.grad = Matrix::Zero(y.rows(), m);
  const Eigen::Index first = cfg.exclude_overall ? 1 : 0;
  double sum = 0.0;
  for (Eigen::Index j = first; j < m; ++j) {
    for (Eigen::Index k = j + 1; k < m; ++k) {
      const auto rows = co_rated_rows(mask, j, k);
      if (rows.size() < 2) continue;
      if (fixed_gate) {
        if ((*fixed_gate)(j, k) == 0.0) continue;
      } else {
        const auto s = similarity(cfg.criterion, gather(y, rows, j), gather(y, rows, k));
        if (!s || *s < cfg.delta) continue;
      }
      const Vector a = gather(yhat, rows, j);
      const Vector b = gather(yhat, rows, k);
      const double na = a.norm(), nb = b.norm();
      if (!(na > 0.0 && nb > 0.0)) continue;
      const double cos = a.dot(b) / (na * nb);
      const double term = 1.0 - cos;
      if (term == 0.0) continue;
      sum += term;
      ++out.terms;
      const Vector ga = -(b / (na * nb) - cos * a / (na * na));
      const Vector gb = -(a / (na * nb) - cos * b / (nb * nb));
      for (std::size_t r = 0; r < rows.size(); ++r) {
        out.grad(rows[r], j) += ga(static_cast<Eigen::Index>(r));
        out.grad(rows[r], k) += gb(static_cast<Eigen::Index>(r));
      }
    }
  }
  if (out.terms == 0) {
    out.grad.setZero();
    return out;
  }
  out.value = sum / out.terms;
  out.grad /= out.terms;
  return out;
}

struct LossBreakdown {
  double mse = 0.0;
  double ts = 0.0;
  double total = 0.0;
  Matrix grad;
};

inline LossBreakdown total_loss(const Matrix& y, const Matrix& yhat, const Matrix& mask, const LossConfig& cfg,
                                const Matrix* fixed_gate = nullptr) {
  auto mse = masked_mse(y, yhat, mask);
  LossBreakdown out;
  out.mse = mse.value;
  if (!cfg.use_ts_loss) {
    out.total = mse.value;
    out.grad = std::move(mse.grad);
    return out;
  }
  auto ts = trait_similarity_loss(y, yhat, mask, cfg, fixed_gate);
  out.ts = ts.value;
  out.total = cfg.lambda * mse.value + (1.0 - cfg.lambda) * ts.value;
  out.grad = cfg.lambda * mse.grad + (1.0 - cfg.lambda) * ts.grad;
  return out;
}

}  // namespace protact
