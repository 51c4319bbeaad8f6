#pragma once

// Essay corpus ingestion: prompt specs, trait registry, the essay TSV,
// score normalization and prompt-wise cross-validation splits.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "errors.hpp"
#include "log.hpp"
#include "random.hpp"

namespace protact {

struct ScoreRange {
  int min = 0;
  int max = 0;

  int width() const { return max - min; }
  bool contains(int v) const { return v >= min && v <= max; }
  bool operator==(const ScoreRange&) const = default;
};

inline double normalize_score(int raw, ScoreRange range) {
  if (range.min >= range.max) throw ConfigError("degenerate score range");
  if (!range.contains(raw)) {
    throw DataError("score " + std::to_string(raw) + " outside range [" +
                    std::to_string(range.min) + "," + std::to_string(range.max) + "]");
  }
  return static_cast<double>(raw - range.min) / static_cast<double>(range.width());
}

inline double denormalize_score(double v, ScoreRange range) {
  if (range.min >= range.max) throw ConfigError("degenerate score range");
  return range.min + v * static_cast<double>(range.width());
}

// Ordered global trait list. Index 0 is always Overall.
class TraitRegistry {
 public:
  static constexpr const char* kOverall = "Overall";

  TraitRegistry() = default;
  explicit TraitRegistry(std::vector<std::string> names) : names_(std::move(names)) {
    if (names_.empty() || names_.front() != kOverall) {
      throw ConfigError("trait registry must start with Overall");
    }
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (!index_.emplace(lower(names_[i]), i).second) {
        throw ConfigError("duplicate trait in registry: " + names_[i]);
      }
    }
  }

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::string& name(std::size_t i) const { return names_.at(i); }

  std::optional<std::size_t> find(const std::string& name) const {
    auto it = index_.find(lower(name));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::size_t index(const std::string& name) const {
    auto i = find(name);
    if (!i) throw ConfigError("unknown trait: " + name);
    return *i;
  }

  static std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct PromptSpec {
  int prompt_id = 0;
  std::string instruction_text;
  std::vector<std::string> traits;            // in registry order
  std::map<std::string, ScoreRange> score_range;

  bool rates(const std::string& trait) const {
    return score_range.count(trait) != 0;
  }
  const ScoreRange& range(const std::string& trait) const {
    auto it = score_range.find(trait);
    if (it == score_range.end()) {
      throw ConfigError("prompt " + std::to_string(prompt_id) + " does not rate " + trait);
    }
    return it->second;
  }
};

struct PromptSet {
  TraitRegistry registry;
  std::vector<PromptSpec> prompts;  // sorted by prompt_id

  const PromptSpec& get(int prompt_id) const {
    auto it = std::lower_bound(prompts.begin(), prompts.end(), prompt_id,
                               [](const PromptSpec& p, int id) { return p.prompt_id < id; });
    if (it == prompts.end() || it->prompt_id != prompt_id) {
      throw DataError("unknown prompt_id " + std::to_string(prompt_id));
    }
    return *it;
  }
  bool has(int prompt_id) const {
    return std::any_of(prompts.begin(), prompts.end(),
                       [&](const PromptSpec& p) { return p.prompt_id == prompt_id; });
  }
  std::vector<int> ids() const {
    std::vector<int> out;
    for (const auto& p : prompts) out.push_back(p.prompt_id);
    return out;
  }
  // Per-trait mask vector for a prompt, in registry order.
  std::vector<double> trait_mask(int prompt_id) const {
    const auto& p = get(prompt_id);
    std::vector<double> m(registry.size(), 0.0);
    for (std::size_t j = 0; j < registry.size(); ++j) m[j] = p.rates(registry.name(j)) ? 1.0 : 0.0;
    return m;
  }
};

struct EssayRecord {
  long essay_id = 0;
  int prompt_id = 0;
  std::string text;
  std::vector<std::optional<int>> gold_raw;  // length M, registry order
  std::vector<double> y;                     // length M, normalized, 0 where unmasked
  std::vector<double> mask;                  // length M, 0/1
};

namespace detail {

inline const std::set<std::string>& default_excluded_traits() {
  static const std::set<std::string> s{"style", "voice"};
  return s;
}

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& s, const std::string& what) {
  std::istringstream in(trim(s));
  T v{};
  in >> v;
  if (in.fail() || !in.eof()) throw DataError("cannot parse " + what + ": '" + s + "'");
  return v;
}

}  // namespace detail

// Parses the prompt spec document. Layout:
//   { "traits": [...registry order, optional...],
//     "excluded_traits": [...optional, default Style/Voice...],
//     "prompts": [ { "id": 1, "instruction": "...", "traits": [...],
//                    "ranges": { "Overall": [2, 12], ... } }, ... ] }
inline PromptSet parse_prompts(const nlohmann::json& doc) {
  if (!doc.is_object() || !doc.contains("prompts") || !doc["prompts"].is_array() ||
      doc["prompts"].empty()) {
    throw ConfigError("no prompts defined");
  }
  std::set<std::string> excluded = detail::default_excluded_traits();
  if (doc.contains("excluded_traits")) {
    excluded.clear();
    for (const auto& t : doc["excluded_traits"]) excluded.insert(TraitRegistry::lower(t.get<std::string>()));
  }

  std::vector<std::string> order;
  auto add_trait = [&](const std::string& t) {
    if (excluded.count(TraitRegistry::lower(t))) return;
    for (const auto& o : order) {
      if (TraitRegistry::lower(o) == TraitRegistry::lower(t)) return;
    }
    order.push_back(t);
  };
  order.emplace_back(TraitRegistry::kOverall);
  if (doc.contains("traits")) {
    for (const auto& t : doc["traits"]) add_trait(t.get<std::string>());
  }
  for (const auto& p : doc["prompts"]) {
    if (!p.contains("traits")) continue;
    for (const auto& t : p["traits"]) add_trait(t.get<std::string>());
  }

  PromptSet set{TraitRegistry(order), {}};
  std::set<int> seen;
  for (const auto& p : doc["prompts"]) {
    PromptSpec spec;
    if (!p.contains("id")) throw ConfigError("prompt entry without id");
    spec.prompt_id = p["id"].get<int>();
    if (!seen.insert(spec.prompt_id).second) {
      throw ConfigError("duplicate prompt_id " + std::to_string(spec.prompt_id));
    }
    spec.instruction_text = p.value("instruction", std::string{});
    std::set<std::size_t> idx;
    if (p.contains("traits")) {
      for (const auto& t : p["traits"]) {
        auto name = t.get<std::string>();
        if (excluded.count(TraitRegistry::lower(name))) continue;
        idx.insert(set.registry.index(name));
      }
    }
    idx.insert(0);  // every prompt carries an Overall score
    const auto ranges = p.value("ranges", nlohmann::json::object());
    for (std::size_t j : idx) {
      const auto& trait = set.registry.name(j);
      const nlohmann::json* r = nullptr;
      for (auto it = ranges.begin(); it != ranges.end(); ++it) {
        if (TraitRegistry::lower(it.key()) == TraitRegistry::lower(trait)) r = &it.value();
      }
      if (!r) {
        throw ConfigError("prompt " + std::to_string(spec.prompt_id) +
                          ": missing score range for trait " + trait);
      }
      ScoreRange range{(*r).at(0).get<int>(), (*r).at(1).get<int>()};
      if (range.min >= range.max) {
        throw ConfigError("prompt " + std::to_string(spec.prompt_id) + ": degenerate range for trait " +
                          trait);
      }
      spec.traits.push_back(trait);
      spec.score_range.emplace(trait, range);
    }
    set.prompts.push_back(std::move(spec));
  }
  std::sort(set.prompts.begin(), set.prompts.end(),
            [](const PromptSpec& a, const PromptSpec& b) { return a.prompt_id < b.prompt_id; });
  return set;
}

inline PromptSet load_prompts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read prompts file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  if (detail::trim(ss.str()).empty()) throw ConfigError("no prompts defined");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("prompts file " + path.string() + ": " + e.what());
  }
  return parse_prompts(doc);
}

inline EssayRecord make_record(long essay_id, int prompt_id, std::string text,
                               std::vector<std::optional<int>> gold_raw, const PromptSet& prompts) {
  const auto& spec = prompts.get(prompt_id);
  const std::size_t m = prompts.registry.size();
  if (gold_raw.size() != m) throw DataError("gold score vector has wrong length");
  EssayRecord rec{essay_id, prompt_id, std::move(text), std::move(gold_raw),
                  std::vector<double>(m, 0.0), std::vector<double>(m, 0.0)};
  for (std::size_t j = 0; j < m; ++j) {
    const auto& trait = prompts.registry.name(j);
    if (!rec.gold_raw[j]) continue;
    if (!spec.rates(trait)) {
      throw DataError("essay " + std::to_string(essay_id) + ": score given for trait " + trait +
                      " which prompt " + std::to_string(prompt_id) + " does not rate");
    }
    rec.y[j] = normalize_score(*rec.gold_raw[j], spec.range(trait));
    rec.mask[j] = 1.0;
  }
  return rec;
}

// Reads the essay TSV: essay_id, prompt_id, essay, then one column per trait.
inline std::vector<EssayRecord> load_dataset(const std::filesystem::path& path,
                                             const PromptSet& prompts) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read dataset: " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError("dataset is empty: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = detail::split_tabs(line);
  if (header.size() < 3) throw DataError("dataset header needs essay_id, prompt_id, essay columns");

  const std::size_t m = prompts.registry.size();
  std::vector<std::optional<std::size_t>> column_trait(header.size());
  std::vector<bool> covered(m, false);
  for (std::size_t c = 3; c < header.size(); ++c) {
    auto name = detail::trim(header[c]);
    if (detail::default_excluded_traits().count(TraitRegistry::lower(name))) continue;
    auto j = prompts.registry.find(name);
    if (!j) throw DataError("dataset column '" + name + "' is not a registry trait");
    column_trait[c] = *j;
    covered[*j] = true;
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (!covered[j]) throw DataError("dataset has no column for trait " + prompts.registry.name(j));
  }

  std::vector<EssayRecord> records;
  std::set<long> ids;
  std::size_t row = 1;
  std::size_t blank_rated = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (detail::trim(line).empty()) continue;
    auto cells = detail::split_tabs(line);
    if (cells.size() != header.size()) {
      throw DataError("row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                      " columns, got " + std::to_string(cells.size()));
    }
    long essay_id = detail::parse_number<long>(cells[0], "essay_id at row " + std::to_string(row));
    int prompt_id = detail::parse_number<int>(cells[1], "prompt_id at row " + std::to_string(row));
    if (!prompts.has(prompt_id)) {
      throw DataError("row " + std::to_string(row) + ": unknown prompt_id " + std::to_string(prompt_id));
    }
    if (!ids.insert(essay_id).second) {
      throw DataError("row " + std::to_string(row) + ": duplicate essay_id " + std::to_string(essay_id));
    }
    const auto& spec = prompts.get(prompt_id);
    std::vector<std::optional<int>> gold(m);
    for (std::size_t c = 3; c < cells.size(); ++c) {
      if (!column_trait[c]) continue;
      auto cell = detail::trim(cells[c]);
      const auto& trait = prompts.registry.name(*column_trait[c]);
      if (cell.empty()) {
        if (spec.rates(trait)) ++blank_rated;
        continue;
      }
      double v = detail::parse_number<double>(cell, trait + " at row " + std::to_string(row));
      if (v != std::floor(v)) {
        throw DataError("row " + std::to_string(row) + ": non-integer score for " + trait);
      }
      int raw = static_cast<int>(v);
      if (spec.rates(trait) && !spec.range(trait).contains(raw)) {
        throw DataError("row " + std::to_string(row) + ": score " + cell + " for " + trait +
                        " outside declared range");
      }
      gold[*column_trait[c]] = raw;
    }
    try {
      records.push_back(make_record(essay_id, prompt_id, cells[2], std::move(gold), prompts));
    } catch (const DataError& e) {
      throw DataError("row " + std::to_string(row) + ": " + e.what());
    }
  }
  if (blank_rated) {
    log_warn(std::to_string(blank_rated) + " blank cells for traits the prompt rates; masked out");
  }
  return records;
}

struct SplitPlan {
  int target_prompt = 0;
  std::vector<long> train_ids;
  std::vector<long> dev_ids;
  std::vector<long> test_ids;
  double dev_fraction = 1.0 / 9.0;
  std::uint64_t seed = 0;

  bool operator==(const SplitPlan&) const = default;
};

inline constexpr double kDefaultDevFraction = 1.0 / 9.0;

// Target-prompt essays form the test set; every other prompt is shuffled
// with the seed and split train/dev with the same fraction per prompt.
inline SplitPlan split_cross_prompt(const std::vector<EssayRecord>& records, int target_prompt,
                                    double dev_fraction, std::uint64_t seed) {
  if (!(dev_fraction > 0.0 && dev_fraction < 1.0)) {
    throw ConfigError("dev_fraction must lie in (0,1)");
  }
  SplitPlan plan;
  plan.target_prompt = target_prompt;
  plan.dev_fraction = dev_fraction;
  plan.seed = seed;
  std::map<int, std::vector<long>> by_prompt;
  for (const auto& r : records) {
    if (r.prompt_id == target_prompt) {
      plan.test_ids.push_back(r.essay_id);
    } else {
      by_prompt[r.prompt_id].push_back(r.essay_id);
    }
  }
  Rng rng(seed);
  for (auto& [prompt, ids] : by_prompt) {
    std::sort(ids.begin(), ids.end());
    rng.shuffle(ids);
    auto n_dev = static_cast<std::size_t>(std::llround(dev_fraction * static_cast<double>(ids.size())));
    n_dev = std::min(n_dev, ids.size());
    plan.dev_ids.insert(plan.dev_ids.end(), ids.begin(), ids.begin() + static_cast<long>(n_dev));
    plan.train_ids.insert(plan.train_ids.end(), ids.begin() + static_cast<long>(n_dev), ids.end());
  }
  std::sort(plan.test_ids.begin(), plan.test_ids.end());
  return plan;
}

inline nlohmann::json to_json(const SplitPlan& p) {
  return {{"target_prompt", p.target_prompt}, {"dev_fraction", p.dev_fraction}, {"seed", p.seed},
          {"train_ids", p.train_ids},         {"dev_ids", p.dev_ids},           {"test_ids", p.test_ids}};
}

inline SplitPlan split_from_json(const nlohmann::json& j) {
  SplitPlan p;
  p.target_prompt = j.at("target_prompt").get<int>();
  p.dev_fraction = j.at("dev_fraction").get<double>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.train_ids = j.at("train_ids").get<std::vector<long>>();
  p.dev_ids = j.at("dev_ids").get<std::vector<long>>();
  p.test_ids = j.at("test_ids").get<std::vector<long>>();
  return p;
}

// Lookup from essay id to record index.
inline std::unordered_map<long, std::size_t> index_by_id(const std::vector<EssayRecord>& records) {
  std::unordered_map<long, std::size_t> idx;
  idx.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) idx.emplace(records[i].essay_id, i);
  return idx;
}

}  // namespace protact
