#pragma once

// Essay-level feature vector: min-max scaled handcrafted features followed
// by the topic-coherence value.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "corpus.hpp"
#include "errors.hpp"
#include "lda.hpp"
#include "log.hpp"
#include "text.hpp"

namespace protact {

using FeatureRow = Eigen::RowVectorXd;

// Column-wise min-max scaling fitted on one set of rows; values outside the
// fitted range are clipped and constant columns map to 0.
struct MinMaxScaler {
  FeatureRow lo;
  FeatureRow hi;

  static MinMaxScaler fit(const std::vector<const FeatureRow*>& rows) {
    if (rows.empty()) throw DataError("cannot fit feature scaler on zero rows");
    MinMaxScaler s;
    s.lo = *rows.front();
    s.hi = *rows.front();
    for (const auto* r : rows) {
      s.lo = s.lo.cwiseMin(*r);
      s.hi = s.hi.cwiseMax(*r);
    }
    return s;
  }

  FeatureRow transform(const FeatureRow& x) const {
    FeatureRow out(x.size());
    for (Eigen::Index c = 0; c < x.size(); ++c) {
      const double w = hi(c) - lo(c);
      out(c) = w > 0.0 ? std::clamp((x(c) - lo(c)) / w, 0.0, 1.0) : 0.0;
    }
    return out;
  }
};

struct HandcraftedTable {
  std::vector<std::string> names;
  std::unordered_map<long, FeatureRow> rows;  // scaled
  MinMaxScaler scaler;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline HandcraftedTable scale_table(std::vector<std::string> names, std::unordered_map<long, FeatureRow> raw,
                                    const std::vector<long>& train_ids) {
  std::vector<const FeatureRow*> fit_rows;
  std::vector<long> missing;
  for (long id : train_ids) {
    auto it = raw.find(id);
    if (it == raw.end()) {
      missing.push_back(id);
    } else {
      fit_rows.push_back(&it->second);
    }
  }
  if (!missing.empty()) {
    std::string msg = "handcrafted features missing for training essays:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + std::to_string(missing[i]);
    if (missing.size() > 20) msg += " ... (" + std::to_string(missing.size()) + " total)";
    throw DataError(msg);
  }
  HandcraftedTable t;
  t.names = std::move(names);
  t.scaler = MinMaxScaler::fit(fit_rows);
  for (auto& [id, row] : raw) t.rows.emplace(id, t.scaler.transform(row));
  return t;
}

}  // namespace detail

// CSV `essay_id,f1..fF`. The scaler sees only rows listed in train_ids.
inline HandcraftedTable load_handcrafted(const std::filesystem::path& path, const std::vector<long>& train_ids) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read handcrafted features: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("handcrafted feature file is empty: " + path.string());
  auto header = detail::split_csv(line);
  if (header.empty() || header.front() != "essay_id") {
    throw DataError("handcrafted feature CSV must start with an essay_id column");
  }
  std::vector<std::string> names(header.begin() + 1, header.end());
  std::unordered_map<long, FeatureRow> raw;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv(line);
    if (cells.size() != header.size()) {
      throw DataError("handcrafted features line " + std::to_string(lineno) + ": expected " +
                      std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
    }
    FeatureRow row(static_cast<Eigen::Index>(names.size()));
    long id;
    try {
      id = std::stol(cells[0]);
      for (std::size_t c = 1; c < cells.size(); ++c) row(static_cast<Eigen::Index>(c - 1)) = std::stod(cells[c]);
    } catch (const std::exception&) {
      throw DataError("handcrafted features line " + std::to_string(lineno) + ": non-numeric field");
    }
    if (!row.allFinite()) throw DataError("handcrafted features line " + std::to_string(lineno) + ": non-finite");
    if (!raw.emplace(id, std::move(row)).second) {
      throw DataError("handcrafted features: duplicate essay_id " + std::to_string(id));
    }
  }
  return detail::scale_table(std::move(names), std::move(raw), train_ids);
}

inline const std::vector<std::string>& fallback_feature_names() {
  static const std::vector<std::string> names = {"n_words",   "n_sentences", "mean_word_length", "unique_word_ratio",
                                                 "n_commas",  "n_exclaims",  "n_questions",      "n_quotes",
                                                 "n_long_words"};
  return names;
}

// Simple surface statistics for corpora that ship without a feature file.
// Not equivalent to the published feature set.
inline FeatureRow fallback_features(std::string_view essay) {
  const auto sentences = text::segment(essay);
  double words = 0, letters = 0, commas = 0, exclaims = 0, questions = 0, quotes = 0, long_words = 0;
  std::unordered_set<std::string> unique;
  for (const auto& s : sentences) {
    for (const auto& tok : s) {
      if (tok == ",") ++commas;
      else if (tok == "!") ++exclaims;
      else if (tok == "?") ++questions;
      else if (tok == "``" || tok == "''") ++quotes;
      if (std::none_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isalnum(c); })) continue;
      ++words;
      letters += static_cast<double>(tok.size());
      if (tok.size() >= 7) ++long_words;
      unique.insert(text::detail::lower(tok));
    }
  }
  FeatureRow f(9);
  f << words, static_cast<double>(sentences.size()), words > 0 ? letters / words : 0.0,
      words > 0 ? static_cast<double>(unique.size()) / words : 0.0, commas, exclaims, questions, quotes, long_words;
  return f;
}

inline HandcraftedTable fallback_table(const std::vector<EssayRecord>& records, const std::vector<long>& train_ids) {
  std::unordered_map<long, FeatureRow> raw;
  for (const auto& r : records) raw.emplace(r.essay_id, fallback_features(r.text));
  return detail::scale_table(fallback_feature_names(), std::move(raw), train_ids);
}

struct TopicFeatureOptions {
  int passes_train = 12;
  int passes_test = 15;
  std::uint64_t seed = 42;
};

// TC per essay: train and dev essays from a model fitted on train+dev only,
// test essays from a model fitted on the whole corpus. Topic count equals
// the number of prompts in the fitting corpus.
inline std::unordered_map<long, double> topic_features(const SplitPlan& plan, const std::vector<EssayRecord>& records,
                                                       const TopicFeatureOptions& opt) {
  const auto idx = index_by_id(records);
  std::unordered_map<long, std::vector<std::string>> tokens;
  for (const auto& r : records) tokens.emplace(r.essay_id, topic_tokens(r.text));

  auto fit = [&](const std::vector<long>& ids, int passes) {
    std::vector<std::vector<std::string>> docs;
    std::set<int> prompts;
    for (long id : ids) {
      auto it = idx.find(id);
      if (it == idx.end()) throw DataError("split references unknown essay_id " + std::to_string(id));
      docs.push_back(tokens.at(id));
      prompts.insert(records[it->second].prompt_id);
    }
    return TopicModel::fit(docs, static_cast<int>(prompts.size()), {passes, opt.seed});
  };

  std::vector<long> seen = plan.train_ids;
  seen.insert(seen.end(), plan.dev_ids.begin(), plan.dev_ids.end());
  std::vector<long> all = seen;
  all.insert(all.end(), plan.test_ids.begin(), plan.test_ids.end());

  const auto train_model = fit(seen, opt.passes_train);
  const auto test_model = fit(all, opt.passes_test);

  std::unordered_map<long, double> tc;
  for (long id : seen) tc[id] = train_model.topic_coherence(tokens.at(id));
  for (long id : plan.test_ids) tc[id] = test_model.topic_coherence(tokens.at(id));
  return tc;
}

struct FeatureSet {
  std::vector<std::string> names;  // column names, tc last when present
  bool has_tc = false;
  std::unordered_map<long, FeatureRow> rows;

  int dim() const { return static_cast<int>(names.size()); }
  const FeatureRow& at(long id) const {
    auto it = rows.find(id);
    if (it == rows.end()) throw DataError("no feature row for essay_id " + std::to_string(id));
    return it->second;
  }
};

// Concatenates handcrafted columns and TC for every essay of the plan.
inline FeatureSet build_feature_vectors(const SplitPlan& plan, const HandcraftedTable& handcrafted,
                                        const std::unordered_map<long, double>* tc) {
  FeatureSet fs;
  fs.names = handcrafted.names;
  fs.has_tc = tc != nullptr;
  if (fs.has_tc) fs.names.push_back("tc");
  std::vector<long> ids = plan.train_ids;
  ids.insert(ids.end(), plan.dev_ids.begin(), plan.dev_ids.end());
  ids.insert(ids.end(), plan.test_ids.begin(), plan.test_ids.end());
  std::vector<long> missing;
  for (long id : ids) {
    auto h = handcrafted.rows.find(id);
    if (h == handcrafted.rows.end()) {
      missing.push_back(id);
      continue;
    }
    FeatureRow row(fs.dim());
    row.head(h->second.size()) = h->second;
    if (fs.has_tc) row(fs.dim() - 1) = tc->at(id);
    fs.rows.emplace(id, std::move(row));
  }
  if (!missing.empty()) {
    std::string msg = "handcrafted features missing for essays:";
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += " " + std::to_string(missing[i]);
    if (missing.size() > 20) msg += " ... (" + std::to_string(missing.size()) + " total)";
    throw DataError(msg);
  }
  return fs;
}

inline void save_features(const FeatureSet& fs, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write features: " + path.string());
  out << "essay_id";
  for (const auto& n : fs.names) out << ',' << n;
  out << '\n';
  std::vector<long> ids;
  for (const auto& [id, row] : fs.rows) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  out.precision(17);
  for (long id : ids) {
    out << id;
    const auto& row = fs.rows.at(id);
    for (Eigen::Index c = 0; c < row.size(); ++c) out << ',' << row(c);
    out << '\n';
  }
}

inline FeatureSet load_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read features: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("feature file is empty: " + path.string());
  auto header = detail::split_csv(line);
  if (header.empty() || header.front() != "essay_id") throw DataError("feature CSV must start with essay_id");
  FeatureSet fs;
  fs.names.assign(header.begin() + 1, header.end());
  fs.has_tc = !fs.names.empty() && fs.names.back() == "tc";
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_csv(line);
    if (cells.size() != header.size()) throw DataError("feature CSV line " + std::to_string(lineno) + ": bad width");
    FeatureRow row(fs.dim());
    for (int c = 0; c < fs.dim(); ++c) row(c) = std::stod(cells[static_cast<std::size_t>(c) + 1]);
    fs.rows.emplace(std::stol(cells[0]), std::move(row));
  }
  return fs;
}

}  // namespace protact
