#pragma once

// Glue from raw records to model-ready inputs.

#include <filesystem>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "config.hpp"
#include "corpus.hpp"
#include "features.hpp"
#include "log.hpp"
#include "model.hpp"
#include "preprocess.hpp"
#include "tagger.hpp"

namespace protact {

struct PreparedCorpus {
  Vocabs vocabs;
  LengthLimits limits;
  std::unordered_map<long, TokenizedDoc> docs;
  PromptDocs prompt_docs;
};

inline std::unordered_map<long, TaggedDoc> tag_records(const std::vector<EssayRecord>& records,
                                                       const BrillTagger& tagger) {
  std::unordered_map<long, TaggedDoc> out;
  out.reserve(records.size());
  for (const auto& r : records) out.emplace(r.essay_id, segment_and_tag(r.text, tagger));
  return out;
}

inline std::map<int, TaggedDoc> tag_prompts(const PromptSet& prompts, const BrillTagger& tagger) {
  std::map<int, TaggedDoc> out;
  for (const auto& p : prompts.prompts) out.emplace(p.prompt_id, segment_and_tag(p.instruction_text, tagger));
  return out;
}

// Vocabularies and length limits come from `vocab_ids` only; every record
// and prompt is then encoded with them.
inline PreparedCorpus prepare_corpus(const std::vector<EssayRecord>& records, const PromptSet& prompts,
                                     const std::unordered_map<long, TaggedDoc>& tagged,
                                     const std::map<int, TaggedDoc>& tagged_prompts,
                                     const std::vector<long>& vocab_ids, LengthLimits caps = kLengthCaps) {
  std::vector<const TaggedDoc*> train_docs;
  for (long id : vocab_ids) {
    auto it = tagged.find(id);
    if (it == tagged.end()) throw DataError("no tagged text for essay " + std::to_string(id));
    train_docs.push_back(&it->second);
  }
  std::vector<const TaggedDoc*> prompt_docs;
  for (const auto& [id, d] : tagged_prompts) prompt_docs.push_back(&d);
  PreparedCorpus pc;
  pc.vocabs = build_vocabs(train_docs, prompt_docs);
  pc.limits = infer_length_limits(train_docs, caps);
  for (const auto& r : records) {
    pc.docs.emplace(r.essay_id, encode(tagged.at(r.essay_id), pc.vocabs, pc.limits.max_sentences, pc.limits.max_words));
  }
  for (const auto& p : prompts.prompts) {
    const auto& d = tagged_prompts.at(p.prompt_id);
    int ms = std::max<int>(1, static_cast<int>(d.size()));
    int mw = 1;
    for (const auto& s : d) mw = std::max<int>(mw, static_cast<int>(s.size()));
    pc.prompt_docs.emplace(p.prompt_id, encode(d, pc.vocabs, ms, mw));
  }
  return pc;
}

// Frozen prompt word vectors: from a file when given, otherwise drawn from
// U(-0.05, 0.05) with the seed.
inline EmbeddingTable prompt_word_table(const Vocab& vocab, const std::string& path, int dim, std::uint64_t seed) {
  if (!path.empty()) {
    auto t = load_embeddings(path, vocab, dim, seed);
    log_info("word embeddings: " + std::to_string(t.hits) + " of " + std::to_string(vocab.size()) +
             " vocabulary entries found");
    return t;
  }
  EmbeddingTable t;
  t.dim = dim;
  Rng rng(seed);
  t.matrix.resize(static_cast<Eigen::Index>(vocab.size()), dim);
  for (Eigen::Index i = 0; i < t.matrix.size(); ++i) t.matrix.data()[i] = rng.uniform(-0.05, 0.05);
  t.matrix.row(0).setZero();
  return t;
}

// Completes the data-dependent sizes of a model configuration.
inline ModelConfig sized_model_config(ModelConfig c, const PromptSet& prompts, const Vocabs& vocabs,
                                      int handcrafted_dim, int word_dim) {
  c.num_traits = static_cast<int>(prompts.registry.size());
  c.pos_vocab_size = static_cast<int>(vocabs.pos.size());
  c.word_vocab_size = static_cast<int>(vocabs.word.size());
  c.word_dim = word_dim;
  c.handcrafted_dim = handcrafted_dim;
  return c;
}

inline std::vector<long> concat_ids(const std::vector<long>& a, const std::vector<long>& b) {
  std::vector<long> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace protact
