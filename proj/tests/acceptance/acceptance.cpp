// Desk-scale acceptance gate. Prints one PASS/FAIL line per criterion and
// exits nonzero when any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "../support.hpp"

using namespace protact;

namespace {

constexpr double kQwkTol = 1e-9;
constexpr double kLossTol = 1e-12;
constexpr double kGradTol = 1e-3;
constexpr double kAttentionTol = 1e-5;
constexpr double kPermutationTol = 1e-9;
constexpr double kAgreementMin = 0.95;
constexpr double kOverfitQwkMin = 0.7;
constexpr double kQwkSeconds = 10;
constexpr double kGradSeconds = 120;
constexpr double kOverfitSeconds = 600;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << v;
  return ss.str();
}

Outcome qwk_oracle() {
  Outcome o;
  std::mt19937 gen(20240601);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int lo = std::uniform_int_distribution<int>(0, 5)(gen);
    const int hi = lo + std::uniform_int_distribution<int>(1, 12)(gen);
    const int n = std::uniform_int_distribution<int>(1, 20)(gen);
    std::uniform_int_distribution<int> rating(lo, hi);
    std::vector<int> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = rating(gen);
      b[i] = gen() % 4 == 0 ? a[i] : rating(gen);
    }
    worst = std::max(worst, std::abs(qwk(a, b, lo, hi) - fixtures::brute_qwk(a, b, lo, hi)));
  }
  o.require(worst <= kQwkTol, "max deviation " + fmt(worst));
  o.detail = o.detail.empty() ? "max deviation " + fmt(worst) : o.detail;
  return o;
}

Outcome loss_values() {
  Outcome o;
  LossConfig cfg;
  Matrix y(1, 2), yhat(1, 2), mask(1, 2);
  y << 1, 0;
  yhat << 0.5, 0.5;
  mask << 1, 0;
  const double mse = masked_mse(y, yhat, mask).value;
  o.require(std::abs(mse - 0.125) <= kLossTol, "masked_mse " + fmt(mse));

  Matrix gy(3, 3), parallel(3, 3);
  gy << 0.5, 0.1, 0.2, 0.5, 0.2, 0.4, 0.5, 0.3, 0.6;
  parallel << 0.9, 0.1, 0.2, 0.1, 0.3, 0.6, 0.4, 0.2, 0.4;
  const double ts_parallel = trait_similarity_loss(gy, parallel, Matrix::Ones(3, 3), cfg).value;
  o.require(std::abs(ts_parallel) <= kLossTol, "parallel pair " + fmt(ts_parallel));

  Matrix oy(2, 3), ortho(2, 3);
  oy << 0.5, 0.5, 0.5, 0.5, 0, 0;
  ortho << 0, 0.5, 0, 0.5, 0, 0.5;
  const auto tl = total_loss(oy, ortho, Matrix::Ones(2, 3), cfg);
  o.require(std::abs(tl.ts - 1.0) <= kLossTol, "orthogonal pair " + fmt(tl.ts));
  o.require(std::abs(tl.mse - 0.125) <= kLossTol, "composed mse " + fmt(tl.mse));
  o.require(std::abs(tl.total - 0.3875) <= kLossTol, "total " + fmt(tl.total));
  if (o.pass) o.detail = "0.125 / 0 / 1.0 / 0.3875";
  return o;
}

Outcome gradient_checks() {
  Outcome o;
  LossConfig cfg;
  Rng rng(31);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Matrix y(4, 3), yhat(4, 3), mask = Matrix::Ones(4, 3);
    for (Eigen::Index i = 0; i < 4; ++i) {
      const double q = rng.uniform();
      y.row(i) << q, q, 0.8 * q + 0.1;
      yhat.row(i) << rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95);
    }
    mask(trial % 4, trial % 3) = 0.0;
    const auto base = total_loss(y, yhat, mask, cfg);
    for (Eigen::Index k = 0; k < yhat.size(); ++k) {
      Matrix p = yhat, m = yhat;
      p.data()[k] += 1e-5;
      m.data()[k] -= 1e-5;
      const double fd = (total_loss(y, p, mask, cfg).total - total_loss(y, m, mask, cfg).total) / 2e-5;
      if (std::abs(fd) < 1e-8 && std::abs(base.grad.data()[k]) < 1e-8) continue;
      worst = std::max(worst, fixtures::relative_error(fd, base.grad.data()[k]));
    }
  }
  o.require(worst < kGradTol, "prediction gradient rel err " + fmt(worst));

  auto f = fixtures::make_fixture(3, 6, fixtures::small_config());
  auto data = fixtures::dataset_for(f, f.plan.train_ids);
  std::vector<EssayInput> batch(data.inputs.begin(), data.inputs.begin() + 4);
  ProtactModel model(f.config, 5);
  const double param_err = fixtures::parameter_gradient_error(model, batch, f.prepared.prompt_docs,
                                                              data.y.topRows(4), data.mask.topRows(4), cfg, 20, 8);
  o.require(param_err < kGradTol, "parameter gradient rel err " + fmt(param_err));
  if (o.pass) o.detail = "predictions " + fmt(worst) + ", 20 parameters " + fmt(param_err);
  return o;
}

Outcome masking_invariance() {
  Outcome o;
  LossConfig cfg;
  Rng rng(41);
  int changed = 0;
  for (int trial = 0; trial < 200; ++trial) {
    Matrix y(5, 4), yhat(5, 4), mask(5, 4);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      y.data()[i] = rng.uniform();
      yhat.data()[i] = rng.uniform(0.05, 0.95);
      mask.data()[i] = rng.uniform() < 0.3 ? 0.0 : 1.0;
    }
    y.col(2) = y.col(1) * 0.5;
    const double before = total_loss(y, yhat, mask, cfg).total;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      if (mask.data()[i] == 0.0) {
        y.data()[i] = rng.uniform();
        yhat.data()[i] = rng.uniform();
      }
    }
    if (total_loss(y, yhat, mask, cfg).total != before) ++changed;
  }
  o.require(changed == 0, std::to_string(changed) + " loss values moved");

  auto c = synth::generate({8, 20, 0.05, 9});
  Rng prng(3);
  int qwk_changed = 0;
  for (const auto& spec : c.prompts.prompts) {
    std::vector<const EssayRecord*> recs;
    std::vector<EssayRecord> scrubbed;
    for (const auto& r : c.records) {
      if (r.prompt_id == spec.prompt_id) recs.push_back(&r);
    }
    Matrix pred(static_cast<Eigen::Index>(recs.size()), static_cast<Eigen::Index>(c.prompts.registry.size()));
    for (Eigen::Index i = 0; i < pred.size(); ++i) pred.data()[i] = prng.uniform();
    const auto before = trait_qwks(recs, pred, c.prompts);
    for (const auto* r : recs) scrubbed.push_back(*r);
    for (std::size_t j = 0; j < c.prompts.registry.size(); ++j) {
      if (spec.rates(c.prompts.registry.name(j))) continue;
      for (auto& r : scrubbed) r.gold_raw[j].reset();
      pred.col(static_cast<Eigen::Index>(j)).setConstant(0.5);
    }
    std::vector<const EssayRecord*> ptrs;
    for (const auto& r : scrubbed) ptrs.push_back(&r);
    if (trait_qwks(ptrs, pred, c.prompts) != before) ++qwk_changed;
  }
  o.require(qwk_changed == 0, std::to_string(qwk_changed) + " prompts changed QWK");
  if (o.pass) o.detail = "200 loss perturbations, 8 prompts";
  return o;
}

Outcome attention_checks() {
  Outcome o;
  auto f = fixtures::make_fixture(3, 6, fixtures::small_config());
  auto data = fixtures::dataset_for(f, f.plan.train_ids);
  ProtactModel model(f.config, 13);
  ForwardTrace trace;
  Rng dropout(4);
  model.forward(std::vector<EssayInput>(data.inputs.begin(), data.inputs.begin() + 5), f.prepared.prompt_docs,
                &dropout, &trace);
  const double dev = fixtures::max_attention_deviation(trace.attention);
  o.require(dev <= kAttentionTol, "attention row deviation " + fmt(dev));
  o.require(!trace.attention.weights.empty(), "no attention recorded");

  Rng rng(21);
  ParamStore store;
  auto mha = MultiHeadParams::create(store, rng, "mha", 6, 6, 6, 2);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Matrix q = init::uniform(rng, 4, 6, 1.0), kv = init::uniform(rng, 4, 6, 1.0);
    std::vector<int> perm{0, 1, 2, 3};
    rng.shuffle(perm);
    Matrix permuted(4, 6);
    for (int i = 0; i < 4; ++i) permuted.row(i) = kv.row(perm[static_cast<std::size_t>(i)]);
    Matrix a = multi_head_attention(ag::constant(q), ag::constant(kv), ag::constant(kv), mha, nullptr).value();
    Matrix b =
        multi_head_attention(ag::constant(q), ag::constant(permuted), ag::constant(permuted), mha, nullptr).value();
    worst = std::max(worst, (a - b).cwiseAbs().maxCoeff());
  }
  o.require(worst <= kPermutationTol, "permutation deviation " + fmt(worst));
  if (o.pass) {
    o.detail = std::to_string(trace.attention.weights.size()) + " weight sets, max deviation " + fmt(dev);
  }
  return o;
}

Outcome lda_checks() {
  Outcome o;
  const std::vector<std::string> va{"computer", "screen", "internet", "keyboard", "online", "software", "email"};
  const std::vector<std::string> vb{"garden", "flower", "winter", "geese", "hibiscus", "spring", "snow"};
  Rng rng(5);
  std::vector<std::vector<std::string>> docs;
  std::vector<int> prompt;
  for (int g = 0; g < 2; ++g) {
    for (int i = 0; i < 50; ++i) {
      std::vector<std::string> d;
      for (int k = 0; k < 40; ++k) d.push_back((g ? vb : va)[rng.below(7)]);
      docs.push_back(std::move(d));
      prompt.push_back(g + 1);
    }
  }
  const auto model = TopicModel::fit(docs, 2, {12, 42});
  const auto agreement = topic_prompt_agreement(model, docs, prompt);
  o.require(agreement.average >= kAgreementMin, "agreement " + fmt(agreement.average));
  int outside = 0;
  for (const auto& d : docs) {
    const double tc = model.topic_coherence(d);
    if (!(tc > 0.0 && tc <= 1.0)) ++outside;
  }
  auto corpus = synth::generate({4, 15, 0.05, 3});
  auto plan = split_cross_prompt(corpus.records, 2, kDefaultDevFraction, 12);
  for (const auto& [id, tc] : topic_features(plan, corpus.records, {2, 2, 12})) {
    if (!(tc > 0.0 && tc <= 1.0)) ++outside;
  }
  o.require(outside == 0, std::to_string(outside) + " TC values outside (0,1]");
  const double t1 = coherence_of(std::vector<std::pair<int, double>>{{0, 0.8337}, {5, 0.16295}});
  const double t2 = coherence_of(std::vector<std::pair<int, double>>{{2, 0.0477}, {5, 0.8701}, {6, 0.0727}});
  o.require(t1 == 0.8337 && t2 == 0.8701, "extraction " + fmt(t1) + ", " + fmt(t2));
  if (o.pass) o.detail = "agreement " + fmt(agreement.average);
  return o;
}

Outcome overfit_smoke() {
  Outcome o;
  auto corpus = synth::generate({8, 8, 0.05, 7});
  std::vector<long> ids;
  for (const auto& r : corpus.records) ids.push_back(r.essay_id);
  SplitPlan plan;
  plan.train_ids = ids;
  const auto tagged = tag_records(corpus.records, fixtures::shared_tagger());
  const auto tagged_prompts = tag_prompts(corpus.prompts, fixtures::shared_tagger());
  const auto prepared = prepare_corpus(corpus.records, corpus.prompts, tagged, tagged_prompts, ids);
  const auto hand = fallback_table(corpus.records, ids);
  const auto tc = topic_features(plan, corpus.records, {12, 15, 42});
  const auto features = build_feature_vectors(plan, hand, &tc);
  ModelConfig base;
  auto cfg = sized_model_config(base, corpus.prompts, prepared.vocabs, static_cast<int>(hand.names.size()), 50);
  ProtactModel model(cfg, 42);
  Rng wrng(42);
  Matrix words = init::uniform(wrng, cfg.word_vocab_size, cfg.word_dim, 0.05);
  model.set_word_embeddings(words);
  const auto data = make_dataset(ids, corpus.records, prepared.docs, features, true);
  TrainOptions opt;
  opt.epochs = 30;
  opt.seed = 42;
  opt.evaluate_train = true;
  const auto state = train(model, data, data, prepared.prompt_docs, corpus.prompts, LossConfig{}, opt);
  bool decreasing = true;
  std::string first5;
  for (int e = 0; e < 5; ++e) {
    first5 += (e ? " " : "") + fmt(state.history[static_cast<std::size_t>(e)].train_eval_mse);
    if (e > 0 && !(state.history[static_cast<std::size_t>(e)].train_eval_mse <
                   state.history[static_cast<std::size_t>(e - 1)].train_eval_mse)) {
      decreasing = false;
    }
  }
  double best_qwk = -1.0;
  for (const auto& h : state.history) best_qwk = std::max(best_qwk, h.train_mean_qwk);
  o.require(decreasing, "training MSE not strictly decreasing: " + first5);
  o.require(best_qwk >= kOverfitQwkMin, "best training QWK " + fmt(best_qwk));
  if (o.pass) o.detail = "MSE " + first5 + ", best training QWK " + fmt(best_qwk);
  return o;
}

}  // namespace

int main() {
  set_log_level(LogLevel::warn);
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
    double max_seconds;
  };
  const std::vector<Criterion> criteria = {
      {1, "QWK oracle equivalence", qwk_oracle, kQwkSeconds},
      {2, "loss correctness", loss_values, 0},
      {3, "gradient checks", gradient_checks, kGradSeconds},
      {4, "masking invariance", masking_invariance, 0},
      {5, "attention normalization", attention_checks, 0},
      {6, "LDA properties", lda_checks, 0},
      {7, "overfit smoke", overfit_smoke, kOverfitSeconds},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.max_seconds > 0 && secs > c.max_seconds) {
      o.pass = false;
      o.detail += " (took " + fmt(secs) + " s, limit " + fmt(c.max_seconds) + " s)";
    }
    std::printf("criterion %d %s: %s (%s) [%.1f s]\n", c.id, c.name, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
