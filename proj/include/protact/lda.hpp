#pragma once

// Latent Dirichlet allocation fitted by batch variational Bayes, plus the
// topic-coherence feature (highest topic probability of a document).

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/random/gamma_distribution.hpp>
#include <boost/random/mersenne_twister.hpp>

#include "errors.hpp"
#include "log.hpp"
#include "text.hpp"

namespace protact {

inline const std::unordered_set<std::string>& stopwords() {
  static const std::unordered_set<std::string> words = {
      "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "your", "yours", "yourself",
      "yourselves", "he", "him", "his", "himself", "she", "her", "hers", "herself", "it", "its", "itself",
      "they", "them", "their", "theirs", "themselves", "what", "which", "who", "whom", "this", "that", "these",
      "those", "am", "is", "are", "was", "were", "be", "been", "being", "have", "has", "had", "having", "do",
      "does", "did", "doing", "a", "an", "the", "and", "but", "if", "or", "because", "as", "until", "while",
      "of", "at", "by", "for", "with", "about", "against", "between", "into", "through", "during", "before",
      "after", "above", "below", "to", "from", "up", "down", "in", "out", "on", "off", "over", "under", "again",
      "further", "then", "once", "here", "there", "when", "where", "why", "how", "all", "any", "both", "each",
      "few", "more", "most", "other", "some", "such", "no", "nor", "not", "only", "own", "same", "so", "than",
      "too", "very", "s", "t", "can", "will", "just", "don", "should", "now", "d", "ll", "m", "o", "re", "ve",
      "y", "ain", "aren", "couldn", "didn", "doesn", "hadn", "hasn", "haven", "isn", "ma", "mightn", "mustn",
      "needn", "shan", "shouldn", "wasn", "weren", "won", "wouldn", "n't", "'s", "'m", "'re", "'ve", "'d",
      "'ll", "would", "could", "also", "us"};
  return words;
}

// Lowercased content tokens: no stopwords, no single characters, no
// punctuation-only tokens and no anonymization placeholders (@CAPS1).
inline std::vector<std::string> topic_tokens(std::string_view essay) {
  std::vector<std::string> out;
  const auto& stop = stopwords();
  for (auto& tok : text::tokenize(essay)) {
    if (tok.size() < 2 || tok.front() == '@') continue;
    if (std::none_of(tok.begin(), tok.end(), [](unsigned char c) { return std::isalnum(c); })) continue;
    auto low = text::detail::lower(tok);
    if (stop.count(low)) continue;
    out.push_back(std::move(low));
  }
  return out;
}

struct BagOfWords {
  std::vector<int> ids;
  std::vector<double> counts;
  bool empty() const { return ids.empty(); }
  double total() const {
    double t = 0;
    for (double c : counts) t += c;
    return t;
  }
};

// Highest topic probability of a document distribution, dense or as
// sparse (topic, probability) pairs.
inline double coherence_of(const Eigen::VectorXd& dist) {
  if (dist.size() == 0) throw std::invalid_argument("coherence of an empty distribution");
  return dist.maxCoeff();
}

inline double coherence_of(const std::vector<std::pair<int, double>>& dist) {
  if (dist.empty()) throw std::invalid_argument("coherence of an empty distribution");
  double best = dist.front().second;
  for (const auto& [topic, p] : dist) best = std::max(best, p);
  return best;
}

class TopicModel {
 public:
  struct Options {
    int passes = 1;
    std::uint64_t seed = 0;
    int max_iterations = 50;        // per-document E-step cap
    double gamma_threshold = 1e-3;  // mean absolute change that ends the E-step
  };

  static TopicModel fit(const std::vector<std::vector<std::string>>& docs, int num_topics, Options opt) {
    if (num_topics < 1) throw ConfigError("LDA needs at least one topic");
    if (opt.passes < 1) throw ConfigError("LDA passes must be >= 1");
    TopicModel m;
    m.num_topics_ = num_topics;
    m.passes_ = opt.passes;
    m.seed_ = opt.seed;
    m.opt_ = opt;
    for (const auto& d : docs) {
      for (const auto& w : d) m.vocab_.try_emplace(w, static_cast<int>(m.vocab_.size()));
    }
    if (m.vocab_.empty()) throw DataError("LDA corpus is empty");
    m.alpha_ = 1.0 / num_topics;
    m.eta_ = 1.0 / num_topics;

    std::vector<BagOfWords> bags;
    bags.reserve(docs.size());
    for (const auto& d : docs) bags.push_back(m.bag(d));

    const auto v = static_cast<Eigen::Index>(m.vocab_.size());
    boost::random::mt19937 gen(static_cast<std::uint32_t>(opt.seed));
    boost::random::gamma_distribution<double> gamma(100.0, 1.0 / 100.0);
    m.lambda_.resize(num_topics, v);
    for (Eigen::Index k = 0; k < m.lambda_.rows(); ++k) {
      for (Eigen::Index w = 0; w < v; ++w) m.lambda_(k, w) = gamma(gen);
    }
    m.refresh();
    for (int pass = 0; pass < opt.passes; ++pass) {
      Eigen::MatrixXd sstats = Eigen::MatrixXd::Zero(num_topics, v);
      for (const auto& b : bags) {
        if (!b.empty()) m.e_step(b, &sstats);
      }
      m.lambda_ = (sstats.array() + m.eta_).matrix();
      m.refresh();
    }
    return m;
  }

  int num_topics() const { return num_topics_; }
  int passes() const { return passes_; }
  std::uint64_t seed() const { return seed_; }
  double doc_topic_prior() const { return alpha_; }
  double topic_word_prior() const { return eta_; }
  std::size_t vocab_size() const { return vocab_.size(); }

  // Row-stochastic [topics x vocabulary].
  Eigen::MatrixXd topic_word() const {
    Eigen::MatrixXd tw = lambda_;
    for (Eigen::Index k = 0; k < tw.rows(); ++k) tw.row(k) /= tw.row(k).sum();
    return tw;
  }

  BagOfWords bag(const std::vector<std::string>& doc) const {
    std::map<int, double> counts;
    for (const auto& w : doc) {
      auto it = vocab_.find(w);
      if (it != vocab_.end()) counts[it->second] += 1.0;
    }
    BagOfWords b;
    for (auto [id, c] : counts) {
      b.ids.push_back(id);
      b.counts.push_back(c);
    }
    return b;
  }

  // Normalized document-topic distribution. A document with no known words
  // gets the uniform distribution.
  Eigen::VectorXd infer(const std::vector<std::string>& doc) const {
    const auto b = bag(doc);
    if (b.empty()) {
      log_info("document has no in-vocabulary topic words; using the uniform topic distribution");
      return Eigen::VectorXd::Constant(num_topics_, 1.0 / num_topics_);
    }
    Eigen::VectorXd g = e_step(b, nullptr);
    return g / g.sum();
  }

  double topic_coherence(const std::vector<std::string>& doc) const { return coherence_of(infer(doc)); }

  int dominant_topic(const std::vector<std::string>& doc) const {
    Eigen::Index k;
    infer(doc).maxCoeff(&k);
    return static_cast<int>(k);
  }

 private:
  static double digamma(double x) { return boost::math::digamma(x); }

  void refresh() {
    exp_elog_beta_.resize(lambda_.rows(), lambda_.cols());
    for (Eigen::Index k = 0; k < lambda_.rows(); ++k) {
      const double dsum = digamma(lambda_.row(k).sum());
      for (Eigen::Index w = 0; w < lambda_.cols(); ++w) exp_elog_beta_(k, w) = std::exp(digamma(lambda_(k, w)) - dsum);
    }
  }

  Eigen::VectorXd exp_elog_theta(const Eigen::VectorXd& g) const {
    const double dsum = digamma(g.sum());
    Eigen::VectorXd out(g.size());
    for (Eigen::Index k = 0; k < g.size(); ++k) out(k) = std::exp(digamma(g(k)) - dsum);
    return out;
  }

  // Variational posterior over topics for one document; adds the expected
  // topic-word counts to `sstats` when given.
  Eigen::VectorXd e_step(const BagOfWords& b, Eigen::MatrixXd* sstats) const {
    const auto n = static_cast<Eigen::Index>(b.ids.size());
    Eigen::MatrixXd beta_d(num_topics_, n);
    Eigen::VectorXd cts(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      beta_d.col(i) = exp_elog_beta_.col(b.ids[static_cast<std::size_t>(i)]);
      cts(i) = b.counts[static_cast<std::size_t>(i)];
    }
    Eigen::VectorXd gamma = Eigen::VectorXd::Ones(num_topics_);
    Eigen::VectorXd theta = exp_elog_theta(gamma);
    Eigen::VectorXd phinorm = (theta.transpose() * beta_d).transpose().array() + 1e-100;
    for (int it = 0; it < opt_.max_iterations; ++it) {
      const Eigen::VectorXd last = gamma;
      gamma = (alpha_ + theta.array() * (beta_d * (cts.array() / phinorm.array()).matrix()).array()).matrix();
      theta = exp_elog_theta(gamma);
      phinorm = (theta.transpose() * beta_d).transpose().array() + 1e-100;
      if ((gamma - last).cwiseAbs().mean() < opt_.gamma_threshold) break;
    }
    if (sstats) {
      const Eigen::MatrixXd contrib =
          (theta * (cts.array() / phinorm.array()).matrix().transpose()).cwiseProduct(beta_d);
      for (Eigen::Index i = 0; i < n; ++i) sstats->col(b.ids[static_cast<std::size_t>(i)]) += contrib.col(i);
    }
    return gamma;
  }

  int num_topics_ = 0;
  int passes_ = 0;
  std::uint64_t seed_ = 0;
  Options opt_;
  double alpha_ = 1.0;
  double eta_ = 1.0;
  std::unordered_map<std::string, int> vocab_;
  Eigen::MatrixXd lambda_;
  Eigen::MatrixXd exp_elog_beta_;
};

struct TopicAgreement {
  std::map<int, double> per_prompt;
  double average = 0.0;
};

// Per prompt: share of its essays whose dominant topic equals the prompt's
// most common dominant topic.
inline TopicAgreement topic_prompt_agreement(const TopicModel& model,
                                             const std::vector<std::vector<std::string>>& docs,
                                             const std::vector<int>& prompt_ids) {
  if (docs.size() != prompt_ids.size()) throw std::invalid_argument("topic_prompt_agreement: length mismatch");
  std::map<int, std::map<int, int>> hist;
  for (std::size_t i = 0; i < docs.size(); ++i) ++hist[prompt_ids[i]][model.dominant_topic(docs[i])];
  TopicAgreement out;
  for (const auto& [p, h] : hist) {
    int total = 0, best = 0;
    for (auto [t, n] : h) {
      total += n;
      best = std::max(best, n);
    }
    out.per_prompt[p] = static_cast<double>(best) / total;
  }
  for (auto [p, v] : out.per_prompt) out.average += v;
  if (!out.per_prompt.empty()) out.average /= static_cast<double>(out.per_prompt.size());
  return out;
}

}  // namespace protact
