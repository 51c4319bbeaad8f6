#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <sys/wait.h>
#include <unistd.h>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("protact_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    std::ofstream cfg(dir_ / "small.json");
    cfg << R"({"model": {"pos_dim": 8, "word_dim": 8, "cnn_filters": 8, "cnn_kernel": 3, "lstm_units": 8,
                         "attn_dim": 8, "heads": 2},
              "train": {"epochs": 2, "seeds": [12]},
              "data": {"max_sentences": 12, "max_words": 20},
              "lda": {"passes_train": 2, "passes_test": 2}})";
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static int run(const std::string& args, std::string* out = nullptr) {
    const auto log = dir_ / "last.log";
    const std::string cmd = std::string("\"") + PROTACT_CLI + "\" --root \"" + (dir_ / "cache").string() + "\" " +
                            args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    if (out) {
      std::ifstream in(log);
      out->assign(std::istreambuf_iterator<char>(in), {});
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static std::string config() { return "--config \"" + (dir_ / "small.json").string() + "\""; }

  static fs::path dir_;
};

fs::path Cli::dir_;

}  // namespace

TEST_F(Cli, EndToEndPipeline) {
  const auto corpus = dir_ / "corpus";
  ASSERT_EQ(run("synth --out \"" + corpus.string() + "\" --prompts 3 --essays-per-prompt 12"), 0);
  ASSERT_TRUE(fs::exists(corpus / "dataset.tsv"));
  ASSERT_TRUE(fs::exists(corpus / "prompts.json"));

  const std::string data = "--data \"" + (corpus / "dataset.tsv").string() + "\" --prompts \"" +
                           (corpus / "prompts.json").string() + "\"";
  ASSERT_EQ(run("prepare " + data + " --target 1 " + config()), 0);
  std::string out;
  ASSERT_EQ(run("prepare " + data + " --target 1 " + config(), &out), 0);
  EXPECT_NE(out.find("up to date"), std::string::npos) << out;

  ASSERT_EQ(run("features --target 1 --seed 12 " + config()), 0);
  ASSERT_EQ(run("train --target 1 --seed 12 " + config(), &out), 0) << out;
  const auto run_dir = dir_ / "cache" / "target_1" / "seed_12" / "ProTACT";
  for (const char* f : {"checkpoint.bin", "train_log.csv", "result.json", "test_qwk.csv", "predictions.csv"}) {
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  }
  std::ifstream res(run_dir / "result.json");
  auto j = nlohmann::json::parse(res);
  EXPECT_EQ(j.at("target").get<int>(), 1);
  EXPECT_FALSE(j.at("qwk").empty());

  ASSERT_EQ(run("train --target 1 --seed 12 " + config(), &out), 0);
  EXPECT_NE(out.find("up to date"), std::string::npos) << out;

  ASSERT_EQ(run("evaluate --checkpoint \"" + (run_dir / "checkpoint.bin").string() + "\"", &out), 0) << out;

  const auto report = dir_ / "report";
  ASSERT_EQ(run("evaluate --aggregate \"" + (dir_ / "cache").string() + "\" --out \"" + report.string() + "\""), 0);
  std::ifstream pr(report / "prompt_report.csv");
  std::string header;
  std::getline(pr, header);
  EXPECT_EQ(header, "model,1,AVG,SD");
  EXPECT_TRUE(fs::exists(report / "trait_report.csv"));

  ASSERT_EQ(run("analyze --what trait-relations " + data + " --out \"" + (dir_ / "analysis").string() + "\""), 0);
}

TEST_F(Cli, ErrorsMapToExitCodes) {
  EXPECT_EQ(run("prepare --data nowhere.tsv"), 2);
  EXPECT_EQ(run("train --target 1 --seed 12 --ablate no-such-thing"), 2);
  EXPECT_EQ(run("prepare --data \"" + (dir_ / "missing.tsv").string() + "\" --prompts \"" +
                (fs::path(PROTACT_DATA_DIR) / "asap_prompts.json").string() + "\" --target 1"),
            3);
  EXPECT_EQ(run("frobnicate"), 2);
}
