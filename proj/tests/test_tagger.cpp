#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace protact;

TEST(Tagger, LoadsLexiconAndRules) {
  const auto& t = fixtures::shared_tagger();
  EXPECT_TRUE(t.loaded());
  EXPECT_GT(t.lexicon_size(), 50000u);
}

TEST(Tagger, AgreesWithReferenceTags) {
  const auto& tagger = fixtures::shared_tagger();
  std::ifstream sents(std::string(PROTACT_TEST_DATA) + "/tagger_sentences.txt");
  std::ifstream ref(std::string(PROTACT_TEST_DATA) + "/tagger_reference.tsv");
  ASSERT_TRUE(sents && ref);
  std::size_t total = 0, agree = 0;
  std::string line;
  while (std::getline(sents, line)) {
    std::istringstream ss(line);
    std::vector<std::string> tokens;
    for (std::string w; ss >> w;) tokens.push_back(w);
    if (tokens.empty()) continue;
    auto tagged = tagger.tag(tokens);
    ASSERT_EQ(tagged.size(), tokens.size());
    for (const auto& [word, tag] : tagged) {
      std::string r;
      ASSERT_TRUE(std::getline(ref, r));
      auto tab = r.find('\t');
      ASSERT_EQ(r.substr(0, tab), word);
      ++total;
      if (r.substr(tab + 1) == tag) ++agree;
    }
    std::getline(ref, line);
  }
  ASSERT_GT(total, 1000u);
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(total), 0.95);
}

TEST(Tagger, UnknownWordsGetDefaults) {
  const auto& tagger = fixtures::shared_tagger();
  auto t = tagger.tag({"Zorblax", "glimfrozzled", "1984"});
  EXPECT_EQ(t[0].second, "NNP");
  EXPECT_EQ(t[2].second, "CD");
}
