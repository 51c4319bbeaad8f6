#pragma once

// Prompt-aware multi-trait essay scorer.
//
//   POS tokens -> conv + attention pooling (shared)      -> sentence matrix S
//   per trait j: MHA(S,S,S) -> LSTM                       -> essay states E_j
//   prompt: (POS + word) -> conv + pool -> MHA -> LSTM    -> prompt states P
//   per trait j: MHA(P, E_j, E_j) -> LSTM -> pooling      -> pa_j
//   con_j = [pa_j ; f], trait attention over the other con -> final_j
//   y_j = sigmoid(w_j . final_j + b_j)

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "autograd.hpp"
#include "errors.hpp"
#include "layers.hpp"
#include "preprocess.hpp"
#include "random.hpp"

namespace protact {

struct ModelConfig {
  int num_traits = 9;
  int pos_vocab_size = 0;
  int word_vocab_size = 0;  // rows of the frozen prompt word-vector table, 0 = none
  int word_dim = 50;
  int handcrafted_dim = 0;

  int pos_dim = 50;
  int cnn_filters = 100;
  int cnn_kernel = 5;
  int lstm_units = 100;
  int heads = 2;
  int attn_dim = 100;
  double dropout = 0.5;
  Activation conv_activation = Activation::linear;

  bool use_prompt_attention = true;
  bool use_tc_feature = true;
  bool use_ts_loss = true;

  int feature_dim() const { return handcrafted_dim + (use_tc_feature ? 1 : 0); }
  int trait_repr_dim() const { return lstm_units + feature_dim(); }

  void validate() const {
    auto positive = [](int v, const char* what) {
      if (v <= 0) throw ConfigError(std::string("model config: ") + what + " must be positive");
    };
    positive(num_traits, "num_traits");
    positive(pos_vocab_size, "pos_vocab_size");
    positive(pos_dim, "pos_dim");
    positive(cnn_filters, "cnn_filters");
    positive(cnn_kernel, "cnn_kernel");
    positive(lstm_units, "lstm_units");
    positive(heads, "heads");
    positive(attn_dim, "attn_dim");
    if (attn_dim % heads != 0) throw ConfigError("model config: attn_dim must be divisible by heads");
    if (handcrafted_dim < 0) throw ConfigError("model config: handcrafted_dim must be >= 0");
    if (word_vocab_size > 0) positive(word_dim, "word_dim");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model config: dropout must lie in [0,1)");
  }
};

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::linear: break;
  }
  return "linear";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "linear") return Activation::linear;
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  throw ConfigError("unknown activation: " + s);
}

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_traits", c.num_traits},
          {"pos_vocab_size", c.pos_vocab_size},
          {"word_vocab_size", c.word_vocab_size},
          {"word_dim", c.word_dim},
          {"handcrafted_dim", c.handcrafted_dim},
          {"pos_dim", c.pos_dim},
          {"cnn_filters", c.cnn_filters},
          {"cnn_kernel", c.cnn_kernel},
          {"lstm_units", c.lstm_units},
          {"heads", c.heads},
          {"attn_dim", c.attn_dim},
          {"dropout", c.dropout},
          {"conv_activation", to_string(c.conv_activation)},
          {"use_prompt_attention", c.use_prompt_attention},
          {"use_tc_feature", c.use_tc_feature},
          {"use_ts_loss", c.use_ts_loss}};
}

// Reads only the keys present; everything else keeps its current value.
inline void merge_json(ModelConfig& c, const nlohmann::json& j) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("num_traits", c.num_traits);
  get("pos_vocab_size", c.pos_vocab_size);
  get("word_vocab_size", c.word_vocab_size);
  get("word_dim", c.word_dim);
  get("handcrafted_dim", c.handcrafted_dim);
  get("pos_dim", c.pos_dim);
  get("cnn_filters", c.cnn_filters);
  get("cnn_kernel", c.cnn_kernel);
  get("lstm_units", c.lstm_units);
  get("heads", c.heads);
  get("attn_dim", c.attn_dim);
  get("dropout", c.dropout);
  if (j.contains("conv_activation")) c.conv_activation = activation_from_string(j.at("conv_activation"));
  get("use_prompt_attention", c.use_prompt_attention);
  get("use_tc_feature", c.use_tc_feature);
  get("use_ts_loss", c.use_ts_loss);
}

struct EssayInput {
  const TokenizedDoc* doc = nullptr;
  Eigen::RowVectorXd features;  // handcrafted features, then TC when enabled
  int prompt_id = 0;
};

using PromptDocs = std::map<int, TokenizedDoc>;

// Per-essay intermediates kept for inspection.
struct EssayIntermediates {
  Matrix sentences;    // S        [n_sent x cnn_filters]
  Matrix prompt_aware; // pa^j     [M x lstm_units]
  Matrix concat;       // con^j    [M x D]
  Matrix attended;     // t^j      [M x D]
  Matrix final_repr;   // final^j  [M x 2D]
};

struct ForwardTrace {
  AttentionTrace attention;
  std::vector<EssayIntermediates> essays;
};

class ProtactModel {
 public:
  ProtactModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
    config_.validate();
    Rng rng(seed);
    const auto& c = config_;

    Matrix pos = init::uniform(rng, c.pos_vocab_size, c.pos_dim, 0.05);
    pos.row(0).setZero();
    pos_embedding_ = store_.add("embed.pos", std::move(pos));

    essay_conv_ = ConvParams::create(store_, rng, "essay.conv", c.pos_dim, c.cnn_filters, c.cnn_kernel);
    essay_sentence_pool_ = PoolParams::create(store_, rng, "essay.sent_pool", c.cnn_filters);

    if (c.use_prompt_attention) {
      if (c.word_vocab_size > 0 && c.word_dim != c.pos_dim) {
        word_projection_ = store_.add("prompt.word_proj", init::glorot(rng, c.word_dim, c.pos_dim));
      }
      prompt_conv_ = ConvParams::create(store_, rng, "prompt.conv", c.pos_dim, c.cnn_filters, c.cnn_kernel);
      prompt_sentence_pool_ = PoolParams::create(store_, rng, "prompt.sent_pool", c.cnn_filters);
      prompt_mha_ = MultiHeadParams::create(store_, rng, "prompt.mha", c.cnn_filters, c.cnn_filters, c.attn_dim, c.heads);
      prompt_lstm_ = LstmParams::create(store_, rng, "prompt.lstm", c.attn_dim, c.lstm_units);
    }

    for (int j = 0; j < c.num_traits; ++j) {
      const auto tag = "trait" + std::to_string(j);
      TraitParams t;
      t.mha = MultiHeadParams::create(store_, rng, tag + ".mha", c.cnn_filters, c.cnn_filters, c.attn_dim, c.heads);
      t.lstm = LstmParams::create(store_, rng, tag + ".lstm", c.attn_dim, c.lstm_units);
      if (c.use_prompt_attention) {
        t.ep_mha = MultiHeadParams::create(store_, rng, tag + ".ep_mha", c.lstm_units, c.lstm_units, c.attn_dim,
                                           c.heads);
        t.ep_lstm = LstmParams::create(store_, rng, tag + ".ep_lstm", c.attn_dim, c.lstm_units);
        t.pool = PoolParams::create(store_, rng, tag + ".ep_pool", c.lstm_units);
      } else {
        t.pool = PoolParams::create(store_, rng, tag + ".essay_pool", c.lstm_units);
      }
      traits_.push_back(std::move(t));
    }
    const int d = c.trait_repr_dim();
    head_w_ = store_.add("head.w", init::glorot(rng, c.num_traits, 2 * d, 2 * d, 1));
    head_b_ = store_.add("head.b", Matrix::Zero(c.num_traits, 1));

    word_embedding_ = ag::constant(Matrix::Zero(std::max(c.word_vocab_size, 1), c.word_vocab_size > 0 ? c.word_dim : c.pos_dim));
  }

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // Frozen pretrained vectors for prompt words. Row count must equal the
  // configured word vocab size.
  void set_word_embeddings(const Matrix& table) {
    if (table.rows() != config_.word_vocab_size || table.cols() != config_.word_dim) {
      throw ConfigError("word embedding table shape does not match model config");
    }
    Matrix t = table;
    t.row(0).setZero();
    word_embedding_ = ag::constant(std::move(t));
  }
  const Matrix& word_embeddings() const { return word_embedding_.value(); }

  // Returns a [B x M] matrix of trait scores in (0,1). Dropout is applied
  // only when `dropout_rng` is given (training mode).
  Var forward(const std::vector<EssayInput>& batch, const PromptDocs& prompts, Rng* dropout_rng = nullptr,
              ForwardTrace* trace = nullptr) const {
    if (batch.empty()) throw std::invalid_argument("forward on an empty batch");
    std::map<int, Var> prompt_cache;
    std::vector<Var> rows;
    rows.reserve(batch.size());
    AttentionTrace* at = trace ? &trace->attention : nullptr;
    for (const auto& essay : batch) {
      if (essay.features.size() != config_.feature_dim()) {
        throw ConfigError("feature vector length " + std::to_string(essay.features.size()) +
                          " does not match model feature_dim " + std::to_string(config_.feature_dim()));
      }
      std::optional<Var> prompt_states;
      if (config_.use_prompt_attention) {
        auto it = prompt_cache.find(essay.prompt_id);
        if (it == prompt_cache.end()) {
          auto pd = prompts.find(essay.prompt_id);
          if (pd == prompts.end()) {
            throw DataError("no encoded prompt for prompt_id " + std::to_string(essay.prompt_id));
          }
          it = prompt_cache.emplace(essay.prompt_id, encode_prompt(pd->second, dropout_rng, at)).first;
        }
        prompt_states = it->second;
      }
      EssayIntermediates* inter = nullptr;
      if (trace) inter = &trace->essays.emplace_back();
      rows.push_back(score_essay(essay, prompt_states, dropout_rng, at, inter));
    }
    return rows.size() == 1 ? rows.front() : ag::concat_rows(rows);
  }

  // Sentence matrix S for an essay (shared encoder).
  Var encode_sentences(const TokenizedDoc& doc, Rng* dropout_rng, AttentionTrace* trace) const {
    auto [ids, lengths] = valid_tokens(doc, false);
    Var emb = dropout(ag::gather_rows(pos_embedding_, ids), dropout_rng);
    return sentence_stack(emb, lengths, essay_conv_, essay_sentence_pool_, dropout_rng, trace);
  }

  // Prompt LSTM state sequence [n_prompt_sentences x lstm_units].
  Var encode_prompt(const TokenizedDoc& doc, Rng* dropout_rng, AttentionTrace* trace) const {
    if (!config_.use_prompt_attention) throw std::logic_error("prompt encoder disabled by config");
    auto [pos_ids, lengths] = valid_tokens(doc, false);
    auto word_ids = valid_tokens(doc, true).first;
    for (int& id : word_ids) {
      if (id >= word_embedding_.rows()) id = Vocab::kUnk < word_embedding_.rows() ? Vocab::kUnk : 0;
    }
    Var pos = ag::gather_rows(pos_embedding_, pos_ids);
    Var words = ag::gather_rows(word_embedding_, word_ids);
    if (word_projection_) {
      words = ag::matmul(words, word_projection_);
    } else if (words.cols() != pos.cols()) {
      throw ConfigError("prompt word and POS embedding dims differ and no projection is configured");
    }
    Var emb = dropout(ag::add(pos, words), dropout_rng);
    Var s = sentence_stack(emb, lengths, prompt_conv_, prompt_sentence_pool_, dropout_rng, trace);
    Var m = multi_head_attention(s, s, s, prompt_mha_, trace);
    return lstm(m, prompt_lstm_);
  }

 private:
  struct TraitParams {
    MultiHeadParams mha;
    LstmParams lstm;
    MultiHeadParams ep_mha;
    LstmParams ep_lstm;
    PoolParams pool;
  };

  static std::pair<std::vector<int>, std::vector<int>> valid_tokens(const TokenizedDoc& doc, bool words) {
    std::vector<int> ids;
    std::vector<int> lengths;
    const int n_sent = std::max(doc.n_sentences, 0);
    for (int s = 0; s < n_sent; ++s) {
      const int len = doc.n_words[static_cast<std::size_t>(s)];
      lengths.push_back(len);
      for (int w = 0; w < len; ++w) ids.push_back(words ? doc.word_at(s, w) : doc.pos_at(s, w));
    }
    if (lengths.empty()) lengths.push_back(0);
    return {std::move(ids), std::move(lengths)};
  }

  Var dropout(const Var& x, Rng* rng) const {
    if (!rng || config_.dropout <= 0.0) return x;
    const double keep = 1.0 - config_.dropout;
    Matrix mask(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng->uniform() < keep ? 1.0 / keep : 0.0;
    return ag::mul_const(x, std::move(mask));
  }

  Var sentence_stack(const Var& emb, const std::vector<int>& lengths, const ConvParams& conv,
                     const PoolParams& pool, Rng* dropout_rng, AttentionTrace* trace) const {
    Var c = conv1d(emb, lengths, conv, config_.conv_activation);
    std::vector<Eigen::Index> segments;
    segments.reserve(lengths.size());
    for (int len : lengths) segments.push_back(ag::conv_positions(len));
    return dropout(attention_pool(c, segments, pool, trace), dropout_rng);
  }

  Var score_essay(const EssayInput& essay, const std::optional<Var>& prompt_states, Rng* dropout_rng,
                  AttentionTrace* trace, EssayIntermediates* inter) const {
    const auto& c = config_;
    Var s = encode_sentences(*essay.doc, dropout_rng, trace);
    Var f = ag::constant(Matrix(essay.features));
    std::vector<Var> con;
    std::vector<Var> pa_rows;
    con.reserve(static_cast<std::size_t>(c.num_traits));
    for (const auto& t : traits_) {
      Var states = lstm(multi_head_attention(s, s, s, t.mha, trace), t.lstm);
      Var pa;
      if (c.use_prompt_attention) {
        Var attended = multi_head_attention(*prompt_states, states, states, t.ep_mha, trace);
        pa = attention_pool(lstm(attended, t.ep_lstm), t.pool, trace);
      } else {
        pa = attention_pool(states, t.pool, trace);
      }
      pa = dropout(pa, dropout_rng);
      pa_rows.push_back(pa);
      con.push_back(f.cols() > 0 ? ag::concat_cols({pa, f}) : pa);
    }
    Var a = c.num_traits == 1 ? con.front() : ag::concat_rows(con);  // [M x D]
    Matrix others = Matrix::Ones(c.num_traits, c.num_traits);
    others.diagonal().setZero();
    Var v = ag::softmax_rows(ag::matmul(a, ag::transpose(a)), &others);
    if (trace && c.num_traits > 1) trace->weights.push_back(v.value());
    Var t = ag::matmul(v, a);
    Var fin = ag::concat_cols({a, t});
    Var logits = ag::add(ag::row_sums(ag::mul(fin, head_w_)), head_b_);  // [M x 1]
    Var y = ag::transpose(ag::sigmoid(logits));
    if (inter) {
      inter->sentences = s.value();
      inter->prompt_aware = (pa_rows.size() == 1 ? pa_rows.front() : ag::concat_rows(pa_rows)).value();
      inter->concat = a.value();
      inter->attended = t.value();
      inter->final_repr = fin.value();
    }
    return y;
  }

  ModelConfig config_;
  ParamStore store_;
  Var pos_embedding_;
  Var word_embedding_;
  Var word_projection_;
  ConvParams essay_conv_;
  PoolParams essay_sentence_pool_;
  ConvParams prompt_conv_;
  PoolParams prompt_sentence_pool_;
  MultiHeadParams prompt_mha_;
  LstmParams prompt_lstm_;
  std::vector<TraitParams> traits_;
  Var head_w_;
  Var head_b_;
};

}  // namespace protact
