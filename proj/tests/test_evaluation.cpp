#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "support.hpp"

using namespace protact;

TEST(Qwk, MatchesBruteForceOracle) {
  std::mt19937 gen(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const int lo = std::uniform_int_distribution<int>(0, 5)(gen);
    const int width = std::uniform_int_distribution<int>(1, 12)(gen);
    const int n = std::uniform_int_distribution<int>(1, 20)(gen);
    std::uniform_int_distribution<int> rating(lo, lo + width);
    std::vector<int> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = rating(gen);
      b[i] = gen() % 3 == 0 ? a[i] : rating(gen);
    }
    EXPECT_NEAR(qwk(a, b, lo, lo + width), fixtures::brute_qwk(a, b, lo, lo + width), 1e-9);
  }
}

TEST(Qwk, WorkedExamples) {
  EXPECT_DOUBLE_EQ(qwk({1, 2, 3}, {1, 2, 3}, 1, 3), 1.0);
  EXPECT_DOUBLE_EQ(qwk({0, 4}, {4, 0}, 0, 4), -1.0);
  EXPECT_DOUBLE_EQ(qwk({2, 2, 2}, {2, 2, 2}, 0, 4), 1.0);
  EXPECT_LE(qwk({0, 1, 2, 3}, {2, 2, 2, 2}, 0, 4), 0.0);
}

TEST(Qwk, ShiftInvariant) {
  std::mt19937 gen(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<int> a(10), b(10), a2(10), b2(10);
    for (int i = 0; i < 10; ++i) {
      a[i] = static_cast<int>(gen() % 5);
      b[i] = static_cast<int>(gen() % 5);
      a2[i] = a[i] + 3;
      b2[i] = b[i] + 3;
    }
    EXPECT_NEAR(qwk(a, b, 0, 7), qwk(a2, b2, 3, 10), 1e-12);
  }
}

TEST(Qwk, RejectsBadInput) {
  EXPECT_THROW(qwk({}, {}, 0, 3), std::invalid_argument);
  EXPECT_THROW(qwk({1}, {5}, 0, 3), std::invalid_argument);
  EXPECT_THROW(qwk({1, 2}, {1}, 0, 3), std::invalid_argument);
}

TEST(Rounding, DenormalizeRoundClip) {
  EXPECT_EQ(to_rating(0.6, {2, 12}), 8);
  EXPECT_EQ(to_rating(0.25, {0, 2}), 0);
  EXPECT_EQ(to_rating(0.75, {0, 2}), 2);
  EXPECT_EQ(to_rating(0.25, {0, 2}, RoundingMode::half_up), 1);
  EXPECT_EQ(to_rating(1.4, {0, 3}), 3);
  EXPECT_EQ(to_rating(-0.2, {0, 3}), 0);
  EXPECT_EQ(rounding_from_string(to_string(RoundingMode::floor)), RoundingMode::floor);
  EXPECT_THROW(rounding_from_string("up"), ConfigError);
}

TEST(TraitQwks, UnratedTraitsOmittedAndRemovalChangesNothing) {
  auto c = synth::generate({3, 20, 0.05, 4});
  std::vector<const EssayRecord*> recs;
  for (const auto& r : c.records) {
    if (r.prompt_id == 3) recs.push_back(&r);
  }
  Rng rng(1);
  Matrix pred(static_cast<Eigen::Index>(recs.size()), static_cast<Eigen::Index>(c.prompts.registry.size()));
  for (Eigen::Index i = 0; i < pred.size(); ++i) pred.data()[i] = rng.uniform();
  auto q = trait_qwks(recs, pred, c.prompts);
  const auto& spec = c.prompts.get(3);
  EXPECT_EQ(q.size(), spec.traits.size());
  for (const auto& [t, v] : q) EXPECT_TRUE(spec.rates(t));

  // scrubbing a trait the prompt does not rate, and its predictions, leaves every kappa as it was
  std::vector<EssayRecord> copy;
  for (const auto* r : recs) copy.push_back(*r);
  Matrix pred2 = pred;
  for (std::size_t j = 0; j < c.prompts.registry.size(); ++j) {
    if (spec.rates(c.prompts.registry.name(j))) continue;
    for (auto& r : copy) r.gold_raw[j].reset();
    pred2.col(static_cast<Eigen::Index>(j)).setConstant(0.123);
  }
  std::vector<const EssayRecord*> ptrs;
  for (const auto& r : copy) ptrs.push_back(&r);
  EXPECT_EQ(trait_qwks(ptrs, pred2, c.prompts), q);
}

TEST(Aggregate, TablesAndPermutationInvariance) {
  std::vector<RunResult> runs = {
      {"ProTACT", 1, 12, {{"Overall", 0.6}, {"Content", 0.4}}},
      {"ProTACT", 1, 22, {{"Overall", 0.8}, {"Content", 0.6}}},
      {"ProTACT", 2, 12, {{"Overall", 0.5}, {"Narrativity", 0.7}}},
      {"ProTACT", 2, 22, {{"Overall", 0.5}, {"Narrativity", 0.7}}},
  };
  auto pt = prompt_table(runs);
  ASSERT_EQ(pt.size(), 1u);
  EXPECT_NEAR(*pt[0].mean["1"], 0.6, 1e-12);
  EXPECT_NEAR(*pt[0].mean["2"], 0.6, 1e-12);
  EXPECT_NEAR(pt[0].avg, 0.6, 1e-12);
  EXPECT_NEAR(pt[0].sd, (0.1 + 0.0) / 2, 1e-12);

  auto tt = trait_table(runs, {"Overall", "Content", "Narrativity"});
  EXPECT_NEAR(*tt[0].mean["Overall"], 0.6, 1e-12);
  EXPECT_NEAR(*tt[0].mean["Content"], 0.5, 1e-12);
  EXPECT_NEAR(*tt[0].mean["Narrativity"], 0.7, 1e-12);
  EXPECT_NEAR(tt[0].sd, (0.05 + 0.1 + 0.0) / 3, 1e-12);

  auto shuffled = runs;
  std::reverse(shuffled.begin(), shuffled.end());
  std::swap(shuffled[0], shuffled[2]);
  EXPECT_NEAR(prompt_table(shuffled)[0].avg, pt[0].avg, 1e-15);
  EXPECT_NEAR(trait_table(shuffled, {"Overall", "Content", "Narrativity"})[0].avg, tt[0].avg, 1e-15);
}

TEST(Aggregate, SingleSeedHasZeroSd) {
  std::vector<RunResult> runs = {{"MSA", 4, 12, {{"Overall", 0.3}}}};
  EXPECT_EQ(prompt_table(runs)[0].sd, 0.0);
  EXPECT_EQ(trait_table(runs, {"Overall"})[0].sd, 0.0);
  auto back = run_result_from_json(to_json(runs[0]));
  EXPECT_EQ(back.model, "MSA");
  EXPECT_EQ(back.qwk, runs[0].qwk);
}

TEST(Relations, SymmetricWithUnitDiagonal) {
  auto c = synth::generate({8, 15, 0.1, 5});
  auto mats = analyze_trait_relations(c.records, c.prompts);
  EXPECT_EQ(mats.size(), 3u);
  for (const auto& m : mats) {
    for (std::size_t a = 0; a < m.traits.size(); ++a) {
      EXPECT_EQ(*m.pcc[a][a], 1.0);
      for (std::size_t b = 0; b < m.traits.size(); ++b) {
        ASSERT_EQ(m.pcc[a][b].has_value(), m.pcc[b][a].has_value());
        if (m.pcc[a][b]) {
          EXPECT_NEAR(*m.pcc[a][b], *m.pcc[b][a], 1e-12);
        }
      }
    }
    EXPECT_GT(mean_off_diagonal(m.pcc), 0.5);
  }
  std::ostringstream out;
  write_matrix_csv({"a", "b"}, {{1.0, std::nullopt}, {std::nullopt, 1.0}}, out);
  EXPECT_NE(out.str().find(",,"), std::string::npos);
}

TEST(Quantiles, LinearInterpolationAndBoxRows) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile({7}, 0.75), 7.0);

  auto c = synth::generate({2, 30, 0.05, 6});
  std::unordered_map<long, double> tc;
  for (const auto& r : c.records) tc[r.essay_id] = 0.8;
  auto rows = analyze_tc_by_trait(tc, c.records, 0, {1});
  std::set<int> levels;
  for (const auto& r : c.records) {
    if (r.prompt_id == 1) levels.insert(*r.gold_raw[0]);
  }
  EXPECT_EQ(rows.size(), levels.size());
  for (const auto& r : rows) {
    EXPECT_EQ(r.min, 0.8);
    EXPECT_EQ(r.q1, 0.8);
    EXPECT_EQ(r.median, 0.8);
    EXPECT_EQ(r.max, 0.8);
  }
}

TEST(Report, UndefinedCellsAreEmpty) {
  EXPECT_EQ(format_cell(std::nullopt), "");
  EXPECT_EQ(format_cell(0.5), "0.500");
}
