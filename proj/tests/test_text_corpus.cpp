#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "support.hpp"

using namespace protact;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("protact_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

nlohmann::json two_prompt_doc() {
  return nlohmann::json::parse(R"({
    "prompts": [
      {"id": 1, "instruction": "Write about computers.", "traits": ["Content", "Organization"],
       "ranges": {"Overall": [2, 12], "Content": [1, 6], "Organization": [1, 6]}},
      {"id": 2, "instruction": "Describe the mood.", "traits": ["Content", "Narrativity", "Voice"],
       "ranges": {"Overall": [0, 3], "Content": [0, 3], "Narrativity": [0, 3]}}
    ]})");
}

}  // namespace

TEST(Tokenize, SplitsPunctuationAndClitics) {
  auto t = text::tokenize("I don't know, really.");
  std::vector<std::string> want{"I", "do", "n't", "know", ",", "really", "."};
  EXPECT_EQ(t, want);
}

TEST(Segment, SplitsOnTerminalPunctuation) {
  auto s = text::segment("Computers help. They teach! Do they?");
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s[0].back(), ".");
  EXPECT_EQ(s[2].back(), "?");
}

TEST(Segment, EmptyTextGivesOneEmptySentence) {
  auto s = text::segment("");
  ASSERT_EQ(s.size(), 1u);
  EXPECT_TRUE(s[0].empty());
}

TEST(Scores, NormalizeRoundTrip) {
  ScoreRange r{2, 12};
  EXPECT_DOUBLE_EQ(normalize_score(7, r), 0.5);
  EXPECT_DOUBLE_EQ(normalize_score(2, r), 0.0);
  EXPECT_DOUBLE_EQ(denormalize_score(0.6, r), 8.0);
  EXPECT_THROW(normalize_score(13, r), DataError);
}

TEST(Prompts, RegistryStartsWithOverallAndDropsExcluded) {
  auto ps = parse_prompts(two_prompt_doc());
  EXPECT_EQ(ps.registry.name(0), "Overall");
  EXPECT_FALSE(ps.registry.find("Voice").has_value());
  EXPECT_EQ(ps.registry.size(), 4u);
  auto mask = ps.trait_mask(1);
  EXPECT_EQ(mask, (std::vector<double>{1, 1, 1, 0}));
}

TEST(Prompts, MissingRangeIsConfigError) {
  auto doc = two_prompt_doc();
  doc["prompts"][0]["ranges"].erase("Content");
  EXPECT_THROW(parse_prompts(doc), ConfigError);
}

TEST(Prompts, ShippedAsapSpecParses) {
  auto ps = load_prompts(fs::path(PROTACT_DATA_DIR) / "asap_prompts.json");
  EXPECT_EQ(ps.prompts.size(), 8u);
  EXPECT_EQ(ps.registry.size(), 9u);
  EXPECT_EQ(ps.get(1).range("Overall"), (ScoreRange{2, 12}));
  EXPECT_EQ(ps.get(8).range("Content"), (ScoreRange{2, 12}));
  EXPECT_EQ(ps.get(7).traits.size(), 4u);
  EXPECT_TRUE(ps.get(3).rates("Prompt Adherence"));
  EXPECT_FALSE(ps.get(3).rates("Word Choice"));
}

TEST(Dataset, LoadsMasksAndRejectsBadRows) {
  auto dir = temp_dir("dataset");
  auto ps = parse_prompts(two_prompt_doc());
  {
    std::ofstream out(dir / "ok.tsv");
    out << "essay_id\tprompt_id\tessay\tOverall\tContent\tOrganization\tNarrativity\n"
        << "1\t1\tSome text.\t7\t3\t4\t\n"
        << "2\t2\tOther text.\t2\t1\t\t3\n";
  }
  auto recs = load_dataset(dir / "ok.tsv", ps);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].mask, (std::vector<double>{1, 1, 1, 0}));
  EXPECT_DOUBLE_EQ(recs[0].y[0], 0.5);
  EXPECT_EQ(recs[1].mask, (std::vector<double>{1, 1, 0, 1}));

  {
    std::ofstream out(dir / "range.tsv");
    out << "essay_id\tprompt_id\tessay\tOverall\tContent\tOrganization\tNarrativity\n"
        << "1\t1\tSome text.\t13\t3\t4\t\n";
  }
  EXPECT_THROW(load_dataset(dir / "range.tsv", ps), DataError);

  {
    std::ofstream out(dir / "unrated.tsv");
    out << "essay_id\tprompt_id\tessay\tOverall\tContent\tOrganization\tNarrativity\n"
        << "1\t1\tSome text.\t7\t3\t4\t2\n";
  }
  EXPECT_THROW(load_dataset(dir / "unrated.tsv", ps), DataError);

  {
    std::ofstream out(dir / "dup.tsv");
    out << "essay_id\tprompt_id\tessay\tOverall\tContent\tOrganization\tNarrativity\n"
        << "1\t1\ta.\t7\t3\t4\t\n1\t1\tb.\t7\t3\t4\t\n";
  }
  EXPECT_THROW(load_dataset(dir / "dup.tsv", ps), DataError);
  fs::remove_all(dir);
}

TEST(Split, TargetPromptIsTestAndSplitIsDeterministic) {
  auto c = synth::generate({4, 18, 0.05, 3});
  auto a = split_cross_prompt(c.records, 2, kDefaultDevFraction, 12);
  auto b = split_cross_prompt(c.records, 2, kDefaultDevFraction, 12);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.test_ids.size(), 18u);
  EXPECT_EQ(a.dev_ids.size(), 6u);
  EXPECT_EQ(a.train_ids.size(), 48u);
  auto idx = index_by_id(c.records);
  for (long id : a.test_ids) EXPECT_EQ(c.records[idx.at(id)].prompt_id, 2);
  for (long id : a.train_ids) EXPECT_NE(c.records[idx.at(id)].prompt_id, 2);
  EXPECT_EQ(split_from_json(to_json(a)), a);
  auto other = split_cross_prompt(c.records, 2, kDefaultDevFraction, 22);
  EXPECT_NE(other.dev_ids, a.dev_ids);
}

TEST(Vocab, ReservedIdsAndUnknownMapping) {
  std::unordered_map<std::string, long> counts{{"NN", 5}, {"VB", 2}};
  auto v = Vocab::from_counts(VocabKind::pos, counts);
  EXPECT_EQ(v.id("NN"), 2);
  EXPECT_EQ(v.id("XYZ"), Vocab::kUnk);
  auto dir = temp_dir("vocab");
  v.save(dir / "v.txt");
  auto w = Vocab::load(VocabKind::pos, dir / "v.txt");
  EXPECT_EQ(w.hash(), v.hash());
  fs::remove_all(dir);
}

TEST(Encode, PadsAndTruncatesToGrid) {
  const auto& tagger = fixtures::shared_tagger();
  auto doc = segment_and_tag("The cat sat on the mat. It was happy. Then it slept all day long.", tagger);
  ASSERT_EQ(doc.size(), 3u);
  auto vocabs = build_vocabs({&doc}, {});
  auto enc = encode(doc, vocabs, 2, 4);
  EXPECT_EQ(enc.n_sentences, 2);
  EXPECT_EQ(enc.n_words, (std::vector<int>{4, 4}));
  EXPECT_EQ(enc.pos_ids.size(), 8u);
  auto wide = encode(doc, vocabs, 5, 10);
  EXPECT_EQ(wide.n_sentences, 3);
  EXPECT_EQ(wide.pos_at(4, 0), Vocab::kPad);
  auto tags = decode_pos(wide, vocabs.pos);
  EXPECT_EQ(tags[0][0], "DT");
  auto limits = infer_length_limits({&doc}, {2, 100});
  EXPECT_EQ(limits.max_sentences, 2);
  EXPECT_EQ(limits.max_words, 7);
}

TEST(Embeddings, FileRowsCopiedAndPadRowZero) {
  auto dir = temp_dir("emb");
  {
    std::ofstream out(dir / "e.txt");
    out << "cat 1 2 3\ndog 4 5 6\n";
  }
  std::unordered_map<std::string, long> counts{{"cat", 3}, {"bird", 1}};
  auto v = Vocab::from_counts(VocabKind::word, counts);
  auto t = load_embeddings(dir / "e.txt", v, 3, 1);
  EXPECT_EQ(t.matrix.row(v.id("cat")), (Eigen::RowVector3d(1, 2, 3)));
  EXPECT_TRUE(t.matrix.row(0).isZero());
  EXPECT_LE(t.matrix.row(v.id("bird")).cwiseAbs().maxCoeff(), 0.05);
  fs::remove_all(dir);
}
