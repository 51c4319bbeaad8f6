#pragma once

// Brill-style transformation tagger producing Penn Treebank tags:
// lexicon lookup, morphological rules for unknown words, then contextual
// rules over the whole sentence. Rule files use Brill's text format.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "text.hpp"

namespace protact {

using TaggedToken = std::pair<std::string, std::string>;
using TaggedSentence = std::vector<TaggedToken>;

class BrillTagger {
 public:
  BrillTagger() = default;

  // Loads en-lexicon.txt, en-morphology.txt and en-context.txt from a directory.
  static BrillTagger load(const std::filesystem::path& dir) {
    BrillTagger t;
    for_lines(dir / "en-lexicon.txt", [&](const std::vector<std::string>& f) {
      if (f.size() >= 2 && !f[1].empty()) t.lexicon_.emplace(f[0], f[1]);
    });
    for_lines(dir / "en-morphology.txt", [&](const std::vector<std::string>& f) {
      if (auto r = parse_morph(f)) t.morphology_.push_back(*r);
    });
    for_lines(dir / "en-context.txt", [&](const std::vector<std::string>& f) {
      if (auto r = parse_context(f)) t.context_.push_back(*r);
    });
    if (t.lexicon_.empty()) throw ConfigError("tagger lexicon is empty: " + dir.string());
    return t;
  }

  bool loaded() const { return !lexicon_.empty(); }
  std::size_t lexicon_size() const { return lexicon_.size(); }

  TaggedSentence tag(const std::vector<std::string>& tokens) const {
    const std::size_t n = tokens.size();
    std::vector<std::string> tags(n);
    std::vector<bool> known(n, false);
    for (std::size_t i = 0; i < n; ++i) {
      if (auto it = lexicon_.find(tokens[i]); it != lexicon_.end()) {
        tags[i] = it->second;
        known[i] = true;
      } else if (i == 0) {
        if (auto lt = lexicon_.find(text::detail::lower(tokens[i])); lt != lexicon_.end()) {
          tags[i] = lt->second;
          known[i] = true;
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (known[i]) continue;
      const auto& w = tokens[i];
      if (is_title(w)) {
        tags[i] = "NNP";
      } else if (is_number(w)) {
        tags[i] = "CD";
      } else {
        tags[i] = "NN";
        apply_morphology(w, tags[i], i > 0 ? &tokens[i - 1] : nullptr,
                         i + 1 < n ? &tokens[i + 1] : nullptr);
      }
    }
    apply_context(tokens, tags);
    TaggedSentence out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.emplace_back(tokens[i], tags[i]);
    return out;
  }

 private:
  enum class MorphCmd { chr, haspref, hassuf, addpref, addsuf, deletepref, deletesuf, goodleft, goodright };

  struct MorphRule {
    bool requires_tag = false;
    std::string from_tag;
    std::string affix;
    MorphCmd cmd{};
    std::string to_tag;
  };

  enum class CtxCmd {
    prevtag, nexttag, prev2tag, next2tag, prev1or2tag, next1or2tag, prev1or2or3tag, next1or2or3tag,
    surroundtag, curwd, prevwd, nextwd, prev1or2wd, next1or2wd, prevwdtag, nextwdtag, wdprevtag,
    wdnexttag, wdand2aft, wdand2tagbfr, wdand2tagaft, lbigram, rbigram, prevbigram, nextbigram
  };

  struct ContextRule {
    std::string from_tag;
    std::string to_tag;
    CtxCmd cmd{};
    std::string x;
    std::string y;
  };

  template <typename F>
  static void for_lines(const std::filesystem::path& path, F&& fn) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read tagger file: " + path.string());
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::size_t b = line.find_first_not_of(" \t");
      if (b == std::string::npos) continue;
      if (line.compare(b, 3, ";;;") == 0) continue;
      std::vector<std::string> fields;
      std::size_t i = b;
      while (i < line.size()) {
        std::size_t j = line.find_first_of(" \t", i);
        if (j == std::string::npos) j = line.size();
        if (j > i) fields.push_back(line.substr(i, j - i));
        i = j + 1;
      }
      fn(fields);
    }
  }

  static std::optional<MorphCmd> morph_cmd(std::string name) {
    static const std::unordered_map<std::string, MorphCmd> kCmds{
        {"char", MorphCmd::chr},          {"haspref", MorphCmd::haspref},
        {"hassuf", MorphCmd::hassuf},     {"addpref", MorphCmd::addpref},
        {"addsuf", MorphCmd::addsuf},     {"deletepref", MorphCmd::deletepref},
        {"deletesuf", MorphCmd::deletesuf}, {"goodleft", MorphCmd::goodleft},
        {"goodright", MorphCmd::goodright}};
    auto it = kCmds.find(name);
    if (it == kCmds.end()) return std::nullopt;
    return it->second;
  }

  // "ly hassuf 2 RB x" or "NN s fhassuf 1 NNS x".
  static std::optional<MorphRule> parse_morph(const std::vector<std::string>& f) {
    if (f.size() < 4) return std::nullopt;
    MorphRule r;
    if (f.size() >= 5 && f[2].size() > 1 && f[2][0] == 'f' && morph_cmd(f[2].substr(1))) {
      r.requires_tag = true;
      r.from_tag = f[0];
      r.affix = f[1];
      r.cmd = *morph_cmd(f[2].substr(1));
    } else if (auto c = morph_cmd(f[1])) {
      r.affix = f[0];
      r.cmd = *c;
    } else {
      return std::nullopt;
    }
    r.to_tag = f[f.size() - 2];
    return r;
  }

  static std::optional<ContextRule> parse_context(const std::vector<std::string>& f) {
    static const std::unordered_map<std::string, CtxCmd> kCmds{
        {"prevtag", CtxCmd::prevtag},         {"nexttag", CtxCmd::nexttag},
        {"prev2tag", CtxCmd::prev2tag},       {"next2tag", CtxCmd::next2tag},
        {"prev1or2tag", CtxCmd::prev1or2tag}, {"next1or2tag", CtxCmd::next1or2tag},
        {"prev1or2or3tag", CtxCmd::prev1or2or3tag}, {"next1or2or3tag", CtxCmd::next1or2or3tag},
        {"surroundtag", CtxCmd::surroundtag}, {"curwd", CtxCmd::curwd},
        {"prevwd", CtxCmd::prevwd},           {"nextwd", CtxCmd::nextwd},
        {"prev1or2wd", CtxCmd::prev1or2wd},   {"next1or2wd", CtxCmd::next1or2wd},
        {"prevwdtag", CtxCmd::prevwdtag},     {"nextwdtag", CtxCmd::nextwdtag},
        {"wdprevtag", CtxCmd::wdprevtag},     {"wdnexttag", CtxCmd::wdnexttag},
        {"wdand2aft", CtxCmd::wdand2aft},     {"wdand2tagbfr", CtxCmd::wdand2tagbfr},
        {"wdand2tagaft", CtxCmd::wdand2tagaft}, {"lbigram", CtxCmd::lbigram},
        {"rbigram", CtxCmd::rbigram},         {"prevbigram", CtxCmd::prevbigram},
        {"nextbigram", CtxCmd::nextbigram}};
    if (f.size() < 4) return std::nullopt;
    auto it = kCmds.find(text::detail::lower(f[2]));
    if (it == kCmds.end()) return std::nullopt;
    return ContextRule{f[0], f[1], it->second, f[3], f.size() > 4 ? f[4] : std::string{}};
  }

  static bool is_title(const std::string& w) {
    // Python str.istitle() over ASCII.
    bool cased = false;
    bool prev_cased = false;
    for (unsigned char c : w) {
      if (std::isupper(c)) {
        if (prev_cased) return false;
        prev_cased = cased = true;
      } else if (std::islower(c)) {
        if (!prev_cased) return false;
        prev_cased = cased = true;
      } else {
        prev_cased = false;
      }
    }
    return cased;
  }

  static bool is_number(const std::string& w) {
    if (w.empty()) return false;
    for (char c : w) {
      if (!(std::isdigit(static_cast<unsigned char>(c)) || c == '-' || c == ',' || c == '.' ||
            c == ':' || c == '/' || c == '%' || c == '$')) {
        return false;
      }
    }
    return true;
  }

  static bool starts_with(const std::string& s, const std::string& p) {
    return s.size() >= p.size() && s.compare(0, p.size(), p) == 0;
  }
  static bool ends_with(const std::string& s, const std::string& p) {
    return s.size() >= p.size() && s.compare(s.size() - p.size(), p.size(), p) == 0;
  }

  void apply_morphology(const std::string& w, std::string& tag, const std::string* prev,
                        const std::string* next) const {
    for (const auto& r : morphology_) {
      if (r.requires_tag && tag != r.from_tag) continue;
      const auto& x = r.affix;
      bool hit = false;
      switch (r.cmd) {
        case MorphCmd::chr: hit = w.find(x) != std::string::npos; break;
        case MorphCmd::haspref: hit = starts_with(w, x); break;
        case MorphCmd::hassuf: hit = ends_with(w, x); break;
        case MorphCmd::addpref: hit = lexicon_.count(x + w) != 0; break;
        case MorphCmd::addsuf: hit = lexicon_.count(w + x) != 0; break;
        case MorphCmd::deletepref: hit = starts_with(w, x) && lexicon_.count(w.substr(x.size())) != 0; break;
        case MorphCmd::deletesuf:
          hit = ends_with(w, x) && lexicon_.count(w.substr(0, w.size() - x.size())) != 0;
          break;
        case MorphCmd::goodleft: hit = next && *next == x; break;
        case MorphCmd::goodright: hit = prev && *prev == x; break;
      }
      if (hit) tag = r.to_tag;
    }
  }

  // Rules fire left to right; a position is matched against its tag as it
  // stood before this position was visited, while neighbours read the
  // already-updated tags.
  void apply_context(const std::vector<std::string>& words, std::vector<std::string>& tags) const {
    static const std::string kBoundary = "STAART";
    const auto n = static_cast<long>(words.size());
    auto W = [&](long i) -> const std::string& { return (i < 0 || i >= n) ? kBoundary : words[static_cast<std::size_t>(i)]; };
    auto T = [&](long i) -> const std::string& { return (i < 0 || i >= n) ? kBoundary : tags[static_cast<std::size_t>(i)]; };
    for (long i = 0; i < n; ++i) {
      const std::string original = tags[static_cast<std::size_t>(i)];
      for (const auto& r : context_) {
        if (original != r.from_tag && r.from_tag != "*") continue;
        const auto& x = r.x;
        const auto& y = r.y;
        bool hit = false;
        switch (r.cmd) {
          case CtxCmd::prevtag: hit = x == T(i - 1); break;
          case CtxCmd::nexttag: hit = x == T(i + 1); break;
          case CtxCmd::prev2tag: hit = x == T(i - 2); break;
          case CtxCmd::next2tag: hit = x == T(i + 2); break;
          case CtxCmd::prev1or2tag: hit = x == T(i - 1) || x == T(i - 2); break;
          case CtxCmd::next1or2tag: hit = x == T(i + 1) || x == T(i + 2); break;
          case CtxCmd::prev1or2or3tag: hit = x == T(i - 1) || x == T(i - 2) || x == T(i - 3); break;
          case CtxCmd::next1or2or3tag: hit = x == T(i + 1) || x == T(i + 2) || x == T(i + 3); break;
          case CtxCmd::surroundtag: hit = x == T(i - 1) && y == T(i + 1); break;
          case CtxCmd::curwd: hit = x == W(i); break;
          case CtxCmd::prevwd: hit = x == W(i - 1); break;
          case CtxCmd::nextwd: hit = x == W(i + 1); break;
          case CtxCmd::prev1or2wd: hit = x == W(i - 1) || x == W(i - 2); break;
          case CtxCmd::next1or2wd: hit = x == W(i + 1) || x == W(i + 2); break;
          case CtxCmd::prevwdtag: hit = x == W(i - 1) && y == T(i - 1); break;
          case CtxCmd::nextwdtag: hit = x == W(i + 1) && y == T(i + 1); break;
          case CtxCmd::wdprevtag: hit = x == T(i - 1) && y == W(i); break;
          case CtxCmd::wdnexttag: hit = x == W(i) && y == T(i + 1); break;
          case CtxCmd::wdand2aft: hit = x == W(i) && y == W(i + 2); break;
          case CtxCmd::wdand2tagbfr: hit = x == T(i - 2) && y == W(i); break;
          case CtxCmd::wdand2tagaft: hit = x == W(i) && y == T(i + 2); break;
          case CtxCmd::lbigram: hit = x == W(i - 1) && y == W(i); break;
          case CtxCmd::rbigram: hit = x == W(i) && y == W(i + 1); break;
          case CtxCmd::prevbigram: hit = x == T(i - 2) && y == T(i - 1); break;
          case CtxCmd::nextbigram: hit = x == T(i + 1) && y == T(i + 2); break;
        }
        if (hit) tags[static_cast<std::size_t>(i)] = r.to_tag;
      }
    }
  }

  std::unordered_map<std::string, std::string> lexicon_;
  std::vector<MorphRule> morphology_;
  std::vector<ContextRule> context_;
};

}  // namespace protact
