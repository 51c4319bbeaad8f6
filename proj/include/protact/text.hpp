#pragma once

// Rule-based sentence segmentation and Penn-Treebank-style tokenization.

#include <algorithm>
#include <array>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace protact::text {

using Sentence = std::vector<std::string>;

namespace detail {

inline bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool is_abbreviation(std::string_view w) {
  static const std::array<std::string_view, 28> kAbbrev{
      "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "vs.", "etc.",
      "e.g.", "i.e.", "u.s.", "u.k.", "a.m.", "p.m.", "no.", "inc.", "co.", "ltd.",
      "jan.", "feb.", "aug.", "sept.", "oct.", "nov.", "dec.", "mt."};
  const auto l = lower(w);
  if (std::find(kAbbrev.begin(), kAbbrev.end(), l) != kAbbrev.end()) return true;
  // Single initials such as "J."
  return w.size() == 2 && std::isalpha(static_cast<unsigned char>(w[0])) &&
         std::isupper(static_cast<unsigned char>(w[0]));
}

inline bool is_leading_punct(char c) {
  return c == '"' || c == '(' || c == '[' || c == '{' || c == '`' || c == '\'';
}

inline bool is_trailing_punct(char c) {
  return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?' || c == '"' ||
         c == ')' || c == ']' || c == '}' || c == '\'';
}

// Splits clitics the way the Treebank does: don't -> do n't, it's -> it 's.
inline void split_clitics(const std::string& word, std::vector<std::string>& out) {
  const auto l = lower(word);
  auto ends = [&](std::string_view suf) {
    return l.size() > suf.size() && l.compare(l.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends("n't")) {
    out.push_back(word.substr(0, word.size() - 3));
    out.push_back(word.substr(word.size() - 3));
    return;
  }
  for (std::string_view suf : {"'ll", "'re", "'ve"}) {
    if (ends(suf)) {
      out.push_back(word.substr(0, word.size() - 3));
      out.push_back(word.substr(word.size() - 3));
      return;
    }
  }
  for (std::string_view suf : {"'s", "'m", "'d"}) {
    if (ends(suf)) {
      out.push_back(word.substr(0, word.size() - 2));
      out.push_back(word.substr(word.size() - 2));
      return;
    }
  }
  out.push_back(word);
}

inline bool is_decimal_or_time(const std::string& core) {
  // "3.5", "1,000", "10:30": punctuation between digits stays attached.
  return !core.empty() && std::isdigit(static_cast<unsigned char>(core.back()));
}

inline void tokenize_chunk(std::string chunk, std::vector<std::string>& out) {
  std::vector<std::string> lead;
  std::vector<std::string> trail;
  while (!chunk.empty() && is_leading_punct(chunk.front())) {
    if (chunk.front() == '"') {
      lead.emplace_back("``");
    } else if (chunk.front() == '`' || chunk.front() == '\'') {
      lead.emplace_back(chunk.size() > 1 && chunk[1] == chunk[0] ? "``" : std::string(1, chunk.front()));
      if (chunk.size() > 1 && chunk[1] == chunk[0]) chunk.erase(0, 1);
    } else {
      lead.emplace_back(1, chunk.front());
    }
    chunk.erase(0, 1);
  }
  while (!chunk.empty()) {
    if (chunk.size() >= 3 && chunk.compare(chunk.size() - 3, 3, "...") == 0) {
      trail.emplace_back("...");
      chunk.erase(chunk.size() - 3);
      continue;
    }
    char c = chunk.back();
    if (!is_trailing_punct(c)) break;
    if (c == '.' && is_abbreviation(chunk)) break;
    if (c == '\'' && chunk.size() > 1 && (chunk[chunk.size() - 2] == 's' || chunk[chunk.size() - 2] == 'S')) {
      // plural possessive: "dogs'" -> dogs '
      trail.emplace_back("'");
      chunk.pop_back();
      continue;
    }
    trail.emplace_back(c == '"' ? "''" : std::string(1, c));
    chunk.pop_back();
  }
  for (auto& t : lead) out.push_back(std::move(t));
  if (!chunk.empty()) {
    // Split internal sentence punctuation glued between words ("end.Next").
    std::size_t start = 0;
    for (std::size_t i = 1; i + 1 < chunk.size(); ++i) {
      char c = chunk[i];
      if ((c == ',' || c == ';' || c == '!' || c == '?') &&
          std::isalpha(static_cast<unsigned char>(chunk[i - 1])) &&
          std::isalpha(static_cast<unsigned char>(chunk[i + 1]))) {
        split_clitics(chunk.substr(start, i - start), out);
        out.emplace_back(1, c);
        start = i + 1;
      }
    }
    auto rest = chunk.substr(start);
    if (!rest.empty()) {
      if (is_decimal_or_time(rest)) {
        out.push_back(rest);
      } else {
        split_clitics(rest, out);
      }
    }
  }
  for (auto it = trail.rbegin(); it != trail.rend(); ++it) out.push_back(std::move(*it));
}

inline bool is_terminal(const std::string& tok) {
  return tok == "." || tok == "!" || tok == "?" || tok == "...";
}

inline bool is_closing(const std::string& tok) {
  return tok == "''" || tok == "'" || tok == ")" || tok == "]" || tok == "}";
}

}  // namespace detail

// Whitespace + punctuation tokenization of a span of text.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && detail::is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !detail::is_space(text[j])) ++j;
    if (j > i) detail::tokenize_chunk(std::string(text.substr(i, j - i)), out);
    i = j;
  }
  return out;
}

// Sentences end at terminal punctuation (plus any closing quotes/brackets)
// or at a blank line. Returns at least one sentence; empty text yields one
// empty sentence.
inline std::vector<Sentence> segment(std::string_view text) {
  std::vector<Sentence> sentences;
  std::size_t para_start = 0;
  auto flush_paragraph = [&](std::string_view para) {
    auto toks = tokenize(para);
    Sentence cur;
    for (std::size_t k = 0; k < toks.size(); ++k) {
      cur.push_back(toks[k]);
      if (detail::is_terminal(toks[k])) {
        while (k + 1 < toks.size() && (detail::is_terminal(toks[k + 1]) || detail::is_closing(toks[k + 1]))) {
          cur.push_back(toks[++k]);
        }
        sentences.push_back(std::move(cur));
        cur.clear();
      }
    }
    if (!cur.empty()) sentences.push_back(std::move(cur));
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '\n') {
      std::size_t k = i + 1;
      while (k < text.size() && (text[k] == ' ' || text[k] == '\t' || text[k] == '\r')) ++k;
      if (k < text.size() && text[k] == '\n') {
        flush_paragraph(text.substr(para_start, i - para_start));
        para_start = k + 1;
        i = k;
      }
    }
  }
  if (para_start < text.size()) flush_paragraph(text.substr(para_start));
  if (sentences.empty()) sentences.emplace_back();
  return sentences;
}

}  // namespace protact::text
