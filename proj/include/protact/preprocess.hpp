#pragma once

// Sentence tagging, vocabularies, integer encoding and word-vector tables.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "corpus.hpp"
#include "errors.hpp"
#include "hash.hpp"
#include "log.hpp"
#include "random.hpp"
#include "tagger.hpp"
#include "text.hpp"

namespace protact {

using TaggedDoc = std::vector<TaggedSentence>;

inline TaggedDoc segment_and_tag(std::string_view essay, const BrillTagger& tagger) {
  auto sentences = text::segment(essay);
  TaggedDoc doc;
  doc.reserve(sentences.size());
  for (const auto& s : sentences) doc.push_back(tagger.tag(s));
  if (doc.size() == 1 && doc.front().empty()) log_warn("empty essay text; encoded as one empty sentence");
  return doc;
}

enum class VocabKind { pos, word };

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;

  Vocab() : Vocab(VocabKind::word) {}
  explicit Vocab(VocabKind kind) : kind_(kind), tokens_{"<pad>", "<unk>"} { rebuild_index(); }

  // Frequency-ordered ids (ties broken lexicographically) after pad/unk.
  static Vocab from_counts(VocabKind kind, const std::unordered_map<std::string, long>& counts) {
    std::vector<std::pair<std::string, long>> items(counts.begin(), counts.end());
    std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      return a.second != b.second ? a.second > b.second : a.first < b.first;
    });
    Vocab v(kind);
    for (auto& [tok, n] : items) {
      if (tok == "<pad>" || tok == "<unk>") continue;
      v.tokens_.push_back(tok);
    }
    v.rebuild_index();
    return v;
  }

  VocabKind kind() const { return kind_; }
  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int id(const std::string& tok) const {
    auto it = index_.find(kind_ == VocabKind::word ? text::detail::lower(tok) : tok);
    return it == index_.end() ? kUnk : it->second;
  }

  bool contains(const std::string& tok) const {
    return index_.count(kind_ == VocabKind::word ? text::detail::lower(tok) : tok) != 0;
  }

  std::string serialize() const {
    std::string out;
    for (const auto& t : tokens_) {
      out += t;
      out += '\n';
    }
    return out;
  }

  std::string hash() const { return sha256_hex(serialize()); }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocab: " + path.string());
    out << serialize();
  }

  static Vocab load(VocabKind kind, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read vocab: " + path.string());
    Vocab v(kind);
    v.tokens_.clear();
    std::string line;
    while (std::getline(in, line)) v.tokens_.push_back(line);
    if (v.tokens_.size() < 2 || v.tokens_[0] != "<pad>" || v.tokens_[1] != "<unk>") {
      throw DataError("malformed vocab file: " + path.string());
    }
    v.rebuild_index();
    return v;
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
  }

  VocabKind kind_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct Vocabs {
  Vocab pos{VocabKind::pos};
  Vocab word{VocabKind::word};
};

// POS vocab from the tagged training essays; word vocab (lowercased) from
// the same essays plus every prompt instruction.
inline Vocabs build_vocabs(const std::vector<const TaggedDoc*>& train_docs,
                           const std::vector<const TaggedDoc*>& prompt_docs) {
  std::unordered_map<std::string, long> pos_counts;
  std::unordered_map<std::string, long> word_counts;
  auto count = [&](const TaggedDoc& d, bool pos) {
    for (const auto& s : d) {
      for (const auto& [w, t] : s) {
        if (pos) ++pos_counts[t];
        ++word_counts[text::detail::lower(w)];
      }
    }
  };
  for (const auto* d : train_docs) count(*d, true);
  for (const auto* d : prompt_docs) count(*d, false);
  return {Vocab::from_counts(VocabKind::pos, pos_counts), Vocab::from_counts(VocabKind::word, word_counts)};
}

struct TokenizedDoc {
  int max_sentences = 0;
  int max_words = 0;
  std::vector<int> pos_ids;   // row-major [max_sentences x max_words]
  std::vector<int> word_ids;  // same shape
  int n_sentences = 0;
  std::vector<int> n_words;   // true length per kept sentence

  int pos_at(int s, int w) const { return pos_ids[static_cast<std::size_t>(s * max_words + w)]; }
  int word_at(int s, int w) const { return word_ids[static_cast<std::size_t>(s * max_words + w)]; }
  bool operator==(const TokenizedDoc&) const = default;
};

// Pads/truncates to exactly [max_sentences x max_words]; truncation keeps
// the head of the essay and the head of each sentence.
inline TokenizedDoc encode(const TaggedDoc& doc, const Vocabs& vocabs, int max_sentences, int max_words) {
  if (max_sentences < 1 || max_words < 1) throw ConfigError("encode limits must be >= 1");
  TokenizedDoc out;
  out.max_sentences = max_sentences;
  out.max_words = max_words;
  const auto cells = static_cast<std::size_t>(max_sentences) * static_cast<std::size_t>(max_words);
  out.pos_ids.assign(cells, Vocab::kPad);
  out.word_ids.assign(cells, Vocab::kPad);
  out.n_sentences = std::min<int>(static_cast<int>(doc.size()), max_sentences);
  for (int s = 0; s < out.n_sentences; ++s) {
    const auto& sent = doc[static_cast<std::size_t>(s)];
    const int len = std::min<int>(static_cast<int>(sent.size()), max_words);
    out.n_words.push_back(len);
    for (int w = 0; w < len; ++w) {
      const auto& [word, tag] = sent[static_cast<std::size_t>(w)];
      const auto k = static_cast<std::size_t>(s * max_words + w);
      out.pos_ids[k] = vocabs.pos.id(tag);
      out.word_ids[k] = vocabs.word.id(word);
    }
  }
  return out;
}

// Tag sequence of the unpadded region.
inline std::vector<std::vector<std::string>> decode_pos(const TokenizedDoc& doc, const Vocab& pos) {
  std::vector<std::vector<std::string>> out;
  for (int s = 0; s < doc.n_sentences; ++s) {
    std::vector<std::string> tags;
    for (int w = 0; w < doc.n_words[static_cast<std::size_t>(s)]; ++w) tags.push_back(pos.token(doc.pos_at(s, w)));
    out.push_back(std::move(tags));
  }
  return out;
}

struct LengthLimits {
  int max_sentences = 97;
  int max_words = 50;
};

inline constexpr LengthLimits kLengthCaps{97, 50};

// Longest training essay / sentence, capped.
inline LengthLimits infer_length_limits(const std::vector<const TaggedDoc*>& train_docs,
                                        LengthLimits caps = kLengthCaps) {
  int ms = 1, mw = 1;
  for (const auto* d : train_docs) {
    ms = std::max(ms, static_cast<int>(d->size()));
    for (const auto& s : *d) mw = std::max(mw, static_cast<int>(s.size()));
  }
  return {std::min(ms, caps.max_sentences), std::min(mw, caps.max_words)};
}

struct EmbeddingTable {
  Eigen::MatrixXd matrix;  // [vocab_size x dim], row 0 is padding
  int dim = 0;
  std::size_t hits = 0;

  double oov_rate() const {
    return matrix.rows() == 0 ? 0.0 : 1.0 - static_cast<double>(hits) / static_cast<double>(matrix.rows());
  }
};

// Reads `token v1 .. v_dim` lines. Vocab rows found in the file are copied,
// the rest are drawn from U(-0.05, 0.05); the pad row stays zero.
inline EmbeddingTable load_embeddings(const std::filesystem::path& path, const Vocab& vocab, int dim,
                                      std::uint64_t seed = 42) {
  if (dim < 1) throw ConfigError("embedding dim must be positive");
  EmbeddingTable t;
  t.dim = dim;
  t.matrix.resize(static_cast<Eigen::Index>(vocab.size()), dim);
  Rng rng(seed);
  for (Eigen::Index r = 0; r < t.matrix.rows(); ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) t.matrix(r, c) = rng.uniform(-0.05, 0.05);
  }
  t.matrix.row(0).setZero();

  std::ifstream in(path);
  if (!in) throw DataError("cannot read embeddings: " + path.string());
  std::vector<bool> seen(vocab.size(), false);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::istringstream ss(line);
    std::string tok;
    if (!(ss >> tok)) continue;
    std::vector<double> v;
    double x;
    while (ss >> x) v.push_back(x);
    if (lineno == 1 && v.size() == 1) continue;  // word2vec-style "count dim" header
    if (static_cast<int>(v.size()) != dim) {
      throw ConfigError("embedding dimension mismatch at line " + std::to_string(lineno) + ": expected " +
                        std::to_string(dim) + ", found " + std::to_string(v.size()));
    }
    if (!vocab.contains(tok)) continue;
    const int id = vocab.id(tok);
    if (id == Vocab::kPad || seen[static_cast<std::size_t>(id)]) continue;
    seen[static_cast<std::size_t>(id)] = true;
    ++t.hits;
    for (int c = 0; c < dim; ++c) t.matrix(id, c) = v[static_cast<std::size_t>(c)];
  }
  return t;
}

}  // namespace protact
