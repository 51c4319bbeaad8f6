#pragma once

#include <cmath>
#include <vector>

#include <json.hpp>

#include "autograd.hpp"

namespace protact {

struct RmspropConfig {
  double lr = 0.001;
  double rho = 0.9;
  double eps = 1e-7;
};

// acc <- rho*acc + (1-rho)*g^2;  p <- p - lr * g / (sqrt(acc) + eps)
class Rmsprop {
 public:
  Rmsprop(std::vector<ag::Var> params, RmspropConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) acc_.push_back(ag::Matrix::Zero(p.rows(), p.cols()));
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      const auto& g = p.grad();
      acc_[i] = cfg_.rho * acc_[i] + (1.0 - cfg_.rho) * g.cwiseProduct(g);
      p.mutable_value() -= (cfg_.lr * g.array() / (acc_[i].array().sqrt() + cfg_.eps)).matrix();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  const std::vector<ag::Matrix>& accumulators() const { return acc_; }
  std::vector<ag::Matrix>& accumulators() { return acc_; }
  const RmspropConfig& config() const { return cfg_; }

 private:
  std::vector<ag::Var> params_;
  RmspropConfig cfg_;
  std::vector<ag::Matrix> acc_;
};

}  // namespace protact
