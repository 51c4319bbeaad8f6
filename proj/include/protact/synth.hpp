#pragma once

// Synthetic multi-prompt corpus with ASAP-like trait layout. Each essay
// has a latent quality q in [0,1] that drives its length, its sentence
// complexity and every trait score; each prompt has its own topic words.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpus.hpp"
#include "errors.hpp"
#include "random.hpp"

namespace protact::synth {

struct Options {
  int num_prompts = 8;
  int essays_per_prompt = 40;
  double noise = 0.08;  // std of per-trait deviation from q, in normalized units
  std::uint64_t seed = 7;
};

namespace detail {

inline const std::vector<std::vector<std::string>>& topics() {
  static const std::vector<std::vector<std::string>> t = {
      {"computer", "internet", "screen", "website", "keyboard", "software", "email", "network"},
      {"library", "book", "shelf", "censorship", "author", "magazine", "reader", "novel"},
      {"cyclist", "road", "desert", "heat", "water", "bicycle", "hill", "journey"},
      {"garden", "winter", "flower", "hibiscus", "spring", "snow", "geese", "season"},
      {"memoir", "family", "kitchen", "parents", "cuban", "house", "music", "tradition"},
      {"airship", "building", "mast", "dirigible", "wind", "tower", "helium", "architect"},
      {"patience", "waiting", "line", "doctor", "store", "moment", "friend", "calm"},
      {"laughter", "joke", "story", "smile", "relationship", "party", "brother", "humor"},
      {"ocean", "boat", "island", "storm", "sailor", "harbor", "wave", "anchor"},
      {"robot", "factory", "machine", "engineer", "circuit", "battery", "sensor", "motor"}};
  return t;
}

struct Layout {
  std::vector<std::string> traits;
  std::vector<std::pair<int, int>> ranges;  // Overall first, then traits
};

inline Layout layout_for(int prompt_index) {
  static const std::vector<std::string> five = {"Content", "Word Choice", "Organization", "Sentence Fluency",
                                                "Conventions"};
  static const std::vector<std::string> four = {"Content", "Prompt Adherence", "Narrativity", "Language"};
  static const std::vector<std::string> three = {"Content", "Organization", "Conventions"};
  switch (prompt_index % 8) {
    case 0: return {five, {{2, 12}, {1, 6}, {1, 6}, {1, 6}, {1, 6}, {1, 6}}};
    case 1: return {five, {{1, 6}, {1, 6}, {1, 6}, {1, 6}, {1, 6}, {1, 6}}};
    case 2:
    case 3: return {four, {{0, 3}, {0, 3}, {0, 3}, {0, 3}, {0, 3}}};
    case 4:
    case 5: return {four, {{0, 4}, {0, 4}, {0, 4}, {0, 4}, {0, 4}}};
    case 6: return {three, {{0, 30}, {0, 6}, {0, 6}, {0, 6}}};
    default: return {five, {{0, 60}, {2, 12}, {2, 12}, {2, 12}, {2, 12}, {2, 12}}};
  }
}

inline const std::string& pick(Rng& rng, const std::vector<std::string>& v) { return v[rng.below(v.size())]; }

inline std::string capitalize(std::string s) {
  if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
  return s;
}

inline std::string sentence(Rng& rng, const std::vector<std::string>& topic, double q) {
  static const std::vector<std::string> det = {"the", "a", "this", "every", "my"};
  static const std::vector<std::string> verb = {"helps", "changes", "shows", "teaches", "shapes", "improves"};
  static const std::vector<std::string> verb_base = {"believe", "think", "argue", "notice", "understand"};
  static const std::vector<std::string> adj = {"important", "useful", "strong", "careful", "difficult",
                                               "remarkable", "valuable", "complex"};
  static const std::vector<std::string> adv = {"clearly", "carefully", "often", "deeply", "quickly", "truly"};
  static const std::vector<std::string> sub = {"because", "although", "when", "while", "since"};
  static const std::vector<std::string> low = {"i like the {n} .", "{n} is good .", "it is fun .",
                                               "the {n} is nice .", "i think {n} is ok ."};
  auto n = [&] { return pick(rng, topic); };
  const double u = rng.uniform();
  std::string s;
  if (u > q + 0.15) {
    s = pick(rng, low);
    const auto pos = s.find("{n}");
    if (pos != std::string::npos) s.replace(pos, 3, n());
  } else if (u > q * 0.5) {
    s = pick(rng, det) + " " + pick(rng, adj) + " " + n() + " " + pick(rng, verb) + " the " + n() + " " +
        pick(rng, adv) + " .";
  } else {
    s = pick(rng, sub) + " " + pick(rng, det) + " " + n() + " is " + pick(rng, adj) + " , we " +
        pick(rng, verb_base) + " that the " + pick(rng, adj) + " " + n() + " " + pick(rng, verb) + " " +
        pick(rng, det) + " " + n() + " " + pick(rng, adv) + " .";
  }
  s = capitalize(s);
  // detach the final period the way an essay writer would type it
  for (auto p : {std::string(" ."), std::string(" ,")}) {
    std::size_t at;
    while ((at = s.find(p)) != std::string::npos) s.erase(at, 1);
  }
  return s;
}

}  // namespace detail

inline nlohmann::json prompt_layout(const Options& opt) {
  nlohmann::json prompts = nlohmann::json::array();
  for (int p = 0; p < opt.num_prompts; ++p) {
    const auto& topic = detail::topics()[static_cast<std::size_t>(p) % detail::topics().size()];
    const auto lay = detail::layout_for(p);
    std::string instruction = "Write an essay about the " + topic[0] + " and the " + topic[1] +
                              ". Explain how the " + topic[2] + " affects people. Use details about the " +
                              topic[3] + ".";
    nlohmann::json ranges;
    ranges["Overall"] = {lay.ranges[0].first, lay.ranges[0].second};
    for (std::size_t t = 0; t < lay.traits.size(); ++t) {
      ranges[lay.traits[t]] = {lay.ranges[t + 1].first, lay.ranges[t + 1].second};
    }
    prompts.push_back({{"id", p + 1}, {"instruction", instruction}, {"traits", lay.traits}, {"ranges", ranges}});
  }
  return {{"prompts", prompts}};
}

struct Corpus {
  PromptSet prompts;
  nlohmann::json prompts_json;
  std::vector<EssayRecord> records;
  std::vector<double> quality;  // latent q per record
};

inline Corpus generate(const Options& opt) {
  if (opt.num_prompts < 1 || opt.essays_per_prompt < 1) throw ConfigError("synth needs >= 1 prompt and essay");
  Corpus c;
  c.prompts_json = prompt_layout(opt);
  c.prompts = parse_prompts(c.prompts_json);
  Rng rng(opt.seed);
  long next_id = 1;
  const auto& names = c.prompts.registry.names();
  for (const auto& spec : c.prompts.prompts) {
    const auto& topic = detail::topics()[static_cast<std::size_t>(spec.prompt_id - 1) % detail::topics().size()];
    for (int e = 0; e < opt.essays_per_prompt; ++e) {
      const double q = rng.uniform();
      const int n_sent = 2 + static_cast<int>(std::lround(q * 8.0 + rng.uniform(-1.0, 1.0)));
      std::string text;
      for (int s = 0; s < std::max(n_sent, 1); ++s) {
        if (!text.empty()) text += ' ';
        text += detail::sentence(rng, topic, q);
      }
      std::vector<std::optional<int>> gold(names.size());
      for (std::size_t j = 0; j < names.size(); ++j) {
        if (!spec.rates(names[j])) continue;
        const auto r = spec.range(names[j]);
        const double v = std::clamp(q + opt.noise * rng.normal(), 0.0, 1.0);
        gold[j] = static_cast<int>(std::clamp<long>(std::lround(r.min + v * r.width()), r.min, r.max));
      }
      c.records.push_back(make_record(next_id++, spec.prompt_id, std::move(text), std::move(gold), c.prompts));
      c.quality.push_back(q);
    }
  }
  return c;
}

inline void write_dataset(const Corpus& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset: " + path.string());
  out << "essay_id\tprompt_id\tessay";
  for (const auto& n : c.prompts.registry.names()) out << '\t' << n;
  out << '\n';
  for (const auto& r : c.records) {
    out << r.essay_id << '\t' << r.prompt_id << '\t' << r.text;
    for (const auto& g : r.gold_raw) {
      out << '\t';
      if (g) out << *g;
    }
    out << '\n';
  }
}

inline void write_prompts(const Corpus& c, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write prompts: " + path.string());
  out << c.prompts_json.dump(2) << '\n';
}

}  // namespace protact::synth
