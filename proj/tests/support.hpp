#pragma once

// Shared fixtures for the unit tests and the acceptance binary.

#include <cmath>
#include <filesystem>
#include <vector>

#include "protact/protact.hpp"

namespace protact::fixtures {

inline std::filesystem::path tagger_dir() { return std::filesystem::path(PROTACT_DATA_DIR) / "tagger"; }

inline const BrillTagger& shared_tagger() {
  static const BrillTagger t = BrillTagger::load(tagger_dir());
  return t;
}

// Confusion-matrix QWK written as an explicit double loop.
inline double brute_qwk(const std::vector<int>& a, const std::vector<int>& b, int lo, int hi) {
  const int r = hi - lo + 1;
  const double n = static_cast<double>(a.size());
  std::vector<std::vector<double>> o(r, std::vector<double>(r, 0.0));
  std::vector<double> ha(r, 0.0), hb(r, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    o[a[i] - lo][b[i] - lo] += 1;
    ha[a[i] - lo] += 1;
    hb[b[i] - lo] += 1;
  }
  double num = 0, den = 0;
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      const double w = r == 1 ? 0.0 : double((i - j) * (i - j)) / double((r - 1) * (r - 1));
      num += w * o[i][j];
      den += w * ha[i] * hb[j] / n;
    }
  }
  if (den == 0) return num == 0 ? 1.0 : 0.0;
  return 1.0 - num / den;
}

inline ModelConfig small_config() {
  ModelConfig c;
  c.pos_dim = 8;
  c.word_dim = 8;
  c.cnn_filters = 8;
  c.cnn_kernel = 3;
  c.lstm_units = 8;
  c.heads = 2;
  c.attn_dim = 8;
  return c;
}

// A synthetic corpus run through the full preparation pipeline.
struct Fixture {
  synth::Corpus corpus;
  SplitPlan plan;
  PreparedCorpus prepared;
  FeatureSet features;
  ModelConfig config;
};

inline Fixture make_fixture(int num_prompts, int per_prompt, ModelConfig base, bool with_tc = true,
                            int target = 1, std::uint64_t seed = 7) {
  Fixture f;
  f.corpus = synth::generate({num_prompts, per_prompt, 0.05, seed});
  f.plan = split_cross_prompt(f.corpus.records, target, kDefaultDevFraction, seed);
  const auto tagged = tag_records(f.corpus.records, shared_tagger());
  const auto tagged_prompts = tag_prompts(f.corpus.prompts, shared_tagger());
  f.prepared = prepare_corpus(f.corpus.records, f.corpus.prompts, tagged, tagged_prompts,
                              concat_ids(f.plan.train_ids, f.plan.dev_ids), {20, 20});
  const auto hand = fallback_table(f.corpus.records, f.plan.train_ids);
  if (with_tc) {
    const auto tc = topic_features(f.plan, f.corpus.records, {2, 2, seed});
    f.features = build_feature_vectors(f.plan, hand, &tc);
  } else {
    f.features = build_feature_vectors(f.plan, hand, nullptr);
  }
  base.use_tc_feature = with_tc;
  f.config = sized_model_config(base, f.corpus.prompts, f.prepared.vocabs,
                                static_cast<int>(hand.names.size()), base.word_dim);
  return f;
}

inline Dataset dataset_for(const Fixture& f, const std::vector<long>& ids) {
  return make_dataset(ids, f.corpus.records, f.prepared.docs, f.features, f.config.use_tc_feature);
}

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({1e-8, std::abs(a), std::abs(b)});
}

// Largest relative error between backprop and central differences of
// total_loss over `samples` randomly chosen scalar parameters.
inline double parameter_gradient_error(ProtactModel& model, const std::vector<EssayInput>& batch,
                                       const PromptDocs& prompts, const Matrix& y, const Matrix& mask,
                                       const LossConfig& cfg, int samples, std::uint64_t seed) {
  auto loss_at = [&] { return total_loss(y, model.forward(batch, prompts).value(), mask, cfg).total; };
  model.params().zero_grad();
  Var yhat = model.forward(batch, prompts);
  ag::backward(yhat, total_loss(y, yhat.value(), mask, cfg).grad);
  Rng rng(seed);
  const auto& params = model.params().params();
  double worst = 0.0;
  int taken = 0;
  while (taken < samples) {
    Var p = params[rng.below(params.size())];
    if (!p.has_grad()) continue;
    const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(p.value().size())));
    const double analytic = p.grad().data()[i];
    const double h = 1e-3;
    const double keep = p.value().data()[i];
    p.mutable_value().data()[i] = keep + h;
    const double up = loss_at();
    p.mutable_value().data()[i] = keep - h;
    const double down = loss_at();
    p.mutable_value().data()[i] = keep;
    const double fd = (up - down) / (2 * h);
    if (std::abs(fd) < 1e-10 && std::abs(analytic) < 1e-10) continue;
    worst = std::max(worst, relative_error(fd, analytic));
    ++taken;
  }
  return worst;
}

inline double max_attention_deviation(const AttentionTrace& trace) {
  double worst = 0.0;
  for (const auto& w : trace.weights) {
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        if (w(r, c) < 0.0) return 1.0;
        s += w(r, c);
      }
      worst = std::max(worst, std::abs(s - 1.0));
    }
  }
  return worst;
}

}  // namespace protact::fixtures
