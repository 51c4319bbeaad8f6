#pragma once

// Run configuration: one JSON document with model, loss, train, data, lda
// and paths sections. Missing keys keep their defaults.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "errors.hpp"
#include "evaluation.hpp"
#include "hash.hpp"
#include "loss.hpp"
#include "model.hpp"
#include "optim.hpp"
#include "preprocess.hpp"

namespace protact {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 10;
  RmspropConfig rmsprop;
  std::vector<std::uint64_t> seeds = {12, 22, 32, 42, 52};
  double dev_fraction = kDefaultDevFraction;
  RoundingMode rounding = RoundingMode::nearest_even;
};

struct DataConfig {
  LengthLimits length_caps = kLengthCaps;
};

struct LdaConfig {
  int passes_train = 12;
  int passes_test = 15;
};

struct PathsConfig {
  std::string word_embeddings;  // optional `token v1..vd` text file
  std::string handcrafted;      // optional `essay_id,f1..fF` CSV
};

struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  DataConfig data;
  LdaConfig lda;
  PathsConfig paths;
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json model = to_json(c.model);
  // sizes filled in from the data are not part of the user configuration
  for (const char* k : {"num_traits", "pos_vocab_size", "word_vocab_size", "handcrafted_dim", "use_ts_loss"}) {
    model.erase(k);
  }
  return {{"model", model},
          {"loss", to_json(c.loss)},
          {"train",
           {{"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"learning_rate", c.train.rmsprop.lr},
            {"rho", c.train.rmsprop.rho},
            {"epsilon", c.train.rmsprop.eps},
            {"seeds", c.train.seeds},
            {"dev_fraction", c.train.dev_fraction},
            {"rounding", to_string(c.train.rounding)}}},
          {"data", {{"max_sentences", c.data.length_caps.max_sentences}, {"max_words", c.data.length_caps.max_words}}},
          {"lda", {{"passes_train", c.lda.passes_train}, {"passes_test", c.lda.passes_test}}},
          {"paths", {{"word_embeddings", c.paths.word_embeddings}, {"handcrafted", c.paths.handcrafted}}}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> sections = {"model", "loss", "train", "data", "lda", "paths"};
  for (const auto& [k, v] : j.items()) {
    if (!sections.count(k)) throw ConfigError("unknown config section: " + k);
  }
  RunConfig c;
  try {
    if (j.contains("model")) merge_json(c.model, j.at("model"));
    if (j.contains("loss")) merge_json(c.loss, j.at("loss"));
    if (j.contains("model") && j.at("model").contains("use_ts_loss")) c.loss.use_ts_loss = c.model.use_ts_loss;
    c.model.use_ts_loss = c.loss.use_ts_loss;
    if (j.contains("train")) {
      const auto& t = j.at("train");
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.rmsprop.lr = t.value("learning_rate", c.train.rmsprop.lr);
      c.train.rmsprop.rho = t.value("rho", c.train.rmsprop.rho);
      c.train.rmsprop.eps = t.value("epsilon", c.train.rmsprop.eps);
      if (t.contains("seeds")) c.train.seeds = t.at("seeds").get<std::vector<std::uint64_t>>();
      c.train.dev_fraction = t.value("dev_fraction", c.train.dev_fraction);
      if (t.contains("rounding")) c.train.rounding = rounding_from_string(t.at("rounding").get<std::string>());
    }
    if (j.contains("data")) {
      const auto& d = j.at("data");
      c.data.length_caps.max_sentences = d.value("max_sentences", c.data.length_caps.max_sentences);
      c.data.length_caps.max_words = d.value("max_words", c.data.length_caps.max_words);
    }
    if (j.contains("lda")) {
      c.lda.passes_train = j.at("lda").value("passes_train", c.lda.passes_train);
      c.lda.passes_test = j.at("lda").value("passes_test", c.lda.passes_test);
    }
    if (j.contains("paths")) {
      c.paths.word_embeddings = j.at("paths").value("word_embeddings", c.paths.word_embeddings);
      c.paths.handcrafted = j.at("paths").value("handcrafted", c.paths.handcrafted);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  c.loss.validate();
  if (c.train.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (c.train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (c.train.seeds.empty()) throw ConfigError("train.seeds must not be empty");
  if (c.lda.passes_train < 1 || c.lda.passes_test < 1) throw ConfigError("lda passes must be >= 1");
  if (c.data.length_caps.max_sentences < 1 || c.data.length_caps.max_words < 1) {
    throw ConfigError("data length caps must be >= 1");
  }
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

// Keys sorted, no whitespace.
inline std::string canonical_json(const nlohmann::json& j) { return j.dump(); }

inline std::string config_hash(const RunConfig& c) { return sha256_hex(canonical_json(to_json(c))); }

}  // namespace protact
