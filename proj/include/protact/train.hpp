#pragma once

// Minibatch training with RMSprop on the interpolated loss, keeping the
// parameters of the epoch with the best mean dev QWK.

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "autograd.hpp"
#include "config.hpp"
#include "corpus.hpp"
#include "errors.hpp"
#include "evaluation.hpp"
#include "features.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "preprocess.hpp"
#include "random.hpp"

namespace protact {

// Essays in a fixed order with everything the model and the losses need.
struct Dataset {
  std::vector<const EssayRecord*> records;
  std::vector<EssayInput> inputs;
  Matrix y;     // [N x M] normalized gold, 0 where unrated
  Matrix mask;  // [N x M]

  std::size_t size() const { return records.size(); }
};

inline Dataset make_dataset(const std::vector<long>& ids, const std::vector<EssayRecord>& records,
                            const std::unordered_map<long, TokenizedDoc>& docs, const FeatureSet& features,
                            bool use_tc) {
  const auto idx = index_by_id(records);
  Dataset d;
  const auto m = ids.empty() ? 0 : records.front().y.size();
  d.y = Matrix::Zero(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(m));
  d.mask = d.y;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = idx.find(ids[i]);
    if (it == idx.end()) throw DataError("unknown essay_id " + std::to_string(ids[i]));
    const auto& r = records[it->second];
    auto doc = docs.find(ids[i]);
    if (doc == docs.end()) throw DataError("essay " + std::to_string(ids[i]) + " has no encoded document");
    FeatureRow f = features.at(ids[i]);
    if (features.has_tc && !use_tc) f = FeatureRow(f.head(f.size() - 1));
    if (!features.has_tc && use_tc) throw ConfigError("model expects a TC feature but the feature set has none");
    d.records.push_back(&r);
    d.inputs.push_back({&doc->second, std::move(f), r.prompt_id});
    for (std::size_t j = 0; j < m; ++j) {
      d.y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.y[j];
      d.mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.mask[j];
    }
  }
  return d;
}

inline Matrix rows_of(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

// Eval-mode predictions [N x M].
inline Matrix predict(const ProtactModel& model, const Dataset& data, const PromptDocs& prompts, int batch = 32) {
  ag::NoGradGuard no_grad;
  Matrix out(static_cast<Eigen::Index>(data.size()), model.config().num_traits);
  for (std::size_t start = 0; start < data.size(); start += static_cast<std::size_t>(batch)) {
    const auto end = std::min(data.size(), start + static_cast<std::size_t>(batch));
    std::vector<EssayInput> b(data.inputs.begin() + static_cast<long>(start), data.inputs.begin() + static_cast<long>(end));
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(end - start)) = model.forward(b, prompts).value();
  }
  return out;
}

struct EpochLog {
  int epoch = 0;  // 1-based
  double mse = 0.0;
  double ts = 0.0;
  double total = 0.0;
  double dev_mean_qwk = 0.0;
  double train_eval_mse = std::numeric_limits<double>::quiet_NaN();   // eval-mode, when requested
  double train_mean_qwk = std::numeric_limits<double>::quiet_NaN();   // eval-mode, when requested
};

struct TrainState {
  int epoch = 0;
  std::vector<EpochLog> history;
  int best_epoch = -1;  // -1 until an epoch completes
  double best_dev_qwk = -std::numeric_limits<double>::infinity();
  std::vector<Matrix> best_params;
  std::vector<Matrix> optimizer_state;
};

struct TrainOptions {
  int epochs = 50;
  int batch_size = 10;
  RmspropConfig rmsprop;
  RoundingMode rounding = RoundingMode::nearest_even;
  std::uint64_t seed = 42;
  bool evaluate_train = false;  // also score the training set each epoch
  std::function<void(const EpochLog&)> on_epoch;
};

namespace detail {

inline std::string describe_batch(const Dataset& data, const std::vector<std::size_t>& rows, const Matrix& yhat,
                                  const LossBreakdown& loss) {
  std::ostringstream ss;
  ss << "non-finite loss (mse=" << loss.mse << ", ts=" << loss.ts << ", total=" << loss.total << ") on batch:";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto* r = data.records[rows[i]];
    ss << "\n  essay " << r->essay_id << " prompt " << r->prompt_id << " prediction "
       << yhat.row(static_cast<Eigen::Index>(i)) << " gold " << data.y.row(static_cast<Eigen::Index>(rows[i]));
  }
  return ss.str();
}

}  // namespace detail

inline double mean_qwk(const ProtactModel& model, const Dataset& data, const PromptDocs& prompts,
                       const PromptSet& prompt_set, RoundingMode rounding, Matrix* pred_out = nullptr) {
  if (data.size() == 0) return 0.0;
  Matrix pred = predict(model, data, prompts);
  const double q = mean_of(trait_qwks(data.records, pred, prompt_set, rounding));
  if (pred_out) *pred_out = std::move(pred);
  return q;
}

inline TrainState train(ProtactModel& model, const Dataset& train_set, const Dataset& dev_set,
                        const PromptDocs& prompts, const PromptSet& prompt_set, const LossConfig& loss_cfg,
                        const TrainOptions& opt) {
  loss_cfg.validate();
  if (opt.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (train_set.size() == 0 && opt.epochs > 0) throw DataError("training set is empty");
  auto& store = model.params();
  Rmsprop optimizer(store.params(), opt.rmsprop);
  Rng order_rng(opt.seed);
  Rng dropout_rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);

  Matrix gate;
  const Matrix* fixed_gate = nullptr;
  if (loss_cfg.use_ts_loss && loss_cfg.global_gate && train_set.size() > 0) {
    gate = trait_gate(train_set.y, train_set.mask, loss_cfg);
    fixed_gate = &gate;
  }

  TrainState state;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
    order_rng.shuffle(order);
    double sum_mse = 0.0, sum_ts = 0.0, sum_total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const auto end = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      std::vector<std::size_t> rows(order.begin() + static_cast<long>(start), order.begin() + static_cast<long>(end));
      std::vector<EssayInput> batch;
      batch.reserve(rows.size());
      for (auto r : rows) batch.push_back(train_set.inputs[r]);
      optimizer.zero_grad();
      Var yhat = model.forward(batch, prompts, &dropout_rng);
      const Matrix y = rows_of(train_set.y, rows);
      const Matrix mask = rows_of(train_set.mask, rows);
      auto loss = total_loss(y, yhat.value(), mask, loss_cfg, fixed_gate);
      if (!std::isfinite(loss.total) || !loss.grad.allFinite()) {
        throw NumericError(detail::describe_batch(train_set, rows, yhat.value(), loss));
      }
      ag::backward(yhat, loss.grad);
      optimizer.step();
      sum_mse += loss.mse;
      sum_ts += loss.ts;
      sum_total += loss.total;
      ++batches;
    }
    EpochLog log;
    log.epoch = epoch;
    log.mse = sum_mse / std::max(batches, 1);
    log.ts = sum_ts / std::max(batches, 1);
    log.total = sum_total / std::max(batches, 1);
    for (const auto& p : store.params()) {
      if (!p.value().allFinite()) throw NumericError("parameters became non-finite in epoch " + std::to_string(epoch));
    }
    log.dev_mean_qwk = mean_qwk(model, dev_set, prompts, prompt_set, opt.rounding);
    if (opt.evaluate_train) {
      Matrix pred;
      log.train_mean_qwk = mean_qwk(model, train_set, prompts, prompt_set, opt.rounding, &pred);
      log.train_eval_mse = masked_mse(train_set.y, pred, train_set.mask).value;
    }
    state.epoch = epoch;
    state.history.push_back(log);
    if (log.dev_mean_qwk > state.best_dev_qwk) {
      state.best_dev_qwk = log.dev_mean_qwk;
      state.best_epoch = epoch;
      state.best_params.clear();
      for (const auto& p : store.params()) state.best_params.push_back(p.value());
    }
    if (opt.on_epoch) opt.on_epoch(log);
  }
  state.optimizer_state = optimizer.accumulators();
  return state;
}

// Loads the best-epoch parameters back into the model (no-op before any
// epoch has completed).
inline void restore_best(ProtactModel& model, const TrainState& state) {
  if (state.best_epoch < 0) return;
  auto& params = model.params().params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    p.mutable_value() = state.best_params[i];
  }
}

inline void write_train_log(const TrainState& state, std::ostream& out) {
  out << "epoch,L_mse,L_ts,L_total,dev_mean_qwk\n";
  out.precision(10);
  for (const auto& e : state.history) {
    out << e.epoch << ',' << e.mse << ',' << e.ts << ',' << e.total << ',' << e.dev_mean_qwk << '\n';
  }
}

}  // namespace protact
