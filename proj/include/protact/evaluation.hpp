#pragma once

// QWK, prediction rounding, report aggregation and the analysis tables
// (trait relation matrices, TC distribution per score level).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "corpus.hpp"
#include "errors.hpp"
#include "loss.hpp"

namespace protact {

// kappa = 1 - sum(w O) / sum(w E), w_ij = (i-j)^2 / (R-1)^2.
inline double qwk(const std::vector<int>& gold, const std::vector<int>& pred, int min_rating, int max_rating) {
  if (gold.size() != pred.size()) throw std::invalid_argument("qwk: length mismatch");
  if (gold.empty()) throw std::invalid_argument("qwk: empty input");
  if (max_rating < min_rating) throw std::invalid_argument("qwk: empty rating range");
  const int r = max_rating - min_rating + 1;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < min_rating || gold[i] > max_rating || pred[i] < min_rating || pred[i] > max_rating) {
      throw std::invalid_argument("qwk: rating outside [" + std::to_string(min_rating) + "," +
                                  std::to_string(max_rating) + "]");
    }
  }
  Eigen::MatrixXd observed = Eigen::MatrixXd::Zero(r, r);
  Eigen::VectorXd hist_gold = Eigen::VectorXd::Zero(r);
  Eigen::VectorXd hist_pred = Eigen::VectorXd::Zero(r);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    observed(gold[i] - min_rating, pred[i] - min_rating) += 1.0;
    hist_gold(gold[i] - min_rating) += 1.0;
    hist_pred(pred[i] - min_rating) += 1.0;
  }
  const double n = static_cast<double>(gold.size());
  const double denom_w = r > 1 ? static_cast<double>((r - 1) * (r - 1)) : 1.0;
  double num = 0.0, den = 0.0;
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < r; ++j) {
      const double w = static_cast<double>((i - j) * (i - j)) / denom_w;
      num += w * observed(i, j);
      den += w * hist_gold(i) * hist_pred(j) / n;
    }
  }
  if (den == 0.0) return num == 0.0 ? 1.0 : 0.0;
  return 1.0 - num / den;
}

enum class RoundingMode { nearest_even, half_up, floor };

inline RoundingMode rounding_from_string(const std::string& s) {
  if (s == "nearest_even") return RoundingMode::nearest_even;
  if (s == "half_up") return RoundingMode::half_up;
  if (s == "floor") return RoundingMode::floor;
  throw ConfigError("unknown rounding mode: " + s);
}

inline std::string to_string(RoundingMode m) {
  switch (m) {
    case RoundingMode::half_up: return "half_up";
    case RoundingMode::floor: return "floor";
    case RoundingMode::nearest_even: break;
  }
  return "nearest_even";
}

// Normalized prediction -> integer rating inside the range.
inline int to_rating(double normalized, ScoreRange range, RoundingMode mode = RoundingMode::nearest_even) {
  const double raw = denormalize_score(normalized, range);
  double r;
  switch (mode) {
    case RoundingMode::half_up: r = std::floor(raw + 0.5); break;
    case RoundingMode::floor: r = std::floor(raw); break;
    case RoundingMode::nearest_even:
    default: r = std::nearbyint(raw); break;
  }
  return static_cast<int>(std::clamp(r, static_cast<double>(range.min), static_cast<double>(range.max)));
}

// QWK per trait over the given records. `pred` rows align with `records`.
// Each prediction is mapped to its own prompt's range; the kappa range is
// the union of the ranges involved. Traits no record rates are omitted.
inline std::map<std::string, double> trait_qwks(const std::vector<const EssayRecord*>& records, const Matrix& pred,
                                               const PromptSet& prompts,
                                               RoundingMode mode = RoundingMode::nearest_even) {
  if (pred.rows() != static_cast<Eigen::Index>(records.size())) {
    throw std::invalid_argument("trait_qwks: prediction rows do not match records");
  }
  std::map<std::string, double> out;
  const auto& names = prompts.registry.names();
  for (std::size_t j = 0; j < names.size(); ++j) {
    std::vector<int> gold, guess;
    int lo = 0, hi = 0;
    bool any = false;
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto* r = records[i];
      if (r->mask[j] == 0.0 || !r->gold_raw[j]) continue;
      const auto& range = prompts.get(r->prompt_id).range(names[j]);
      lo = any ? std::min(lo, range.min) : range.min;
      hi = any ? std::max(hi, range.max) : range.max;
      any = true;
      gold.push_back(*r->gold_raw[j]);
      guess.push_back(to_rating(pred(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), range, mode));
    }
    if (!any) continue;
    out[names[j]] = qwk(gold, guess, lo, hi);
  }
  return out;
}

inline double mean_of(const std::map<std::string, double>& m) {
  if (m.empty()) return 0.0;
  double s = 0.0;
  for (const auto& [k, v] : m) s += v;
  return s / static_cast<double>(m.size());
}

// ------------------------------------------------------------- aggregation

struct RunResult {
  std::string model = "ProTACT";
  int target = 0;
  std::uint64_t seed = 0;
  std::map<std::string, double> qwk;  // trait -> kappa on the target prompt
};

inline nlohmann::json to_json(const RunResult& r) {
  return {{"model", r.model}, {"target", r.target}, {"seed", r.seed}, {"qwk", r.qwk}};
}

inline RunResult run_result_from_json(const nlohmann::json& j) {
  RunResult r;
  r.model = j.value("model", std::string("ProTACT"));
  r.target = j.at("target").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.qwk = j.at("qwk").get<std::map<std::string, double>>();
  return r;
}

inline double population_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

struct ReportRow {
  std::string model;
  std::vector<std::string> columns;                  // prompt ids or trait names
  std::map<std::string, std::optional<double>> mean;  // column -> mean over seeds
  double avg = 0.0;
  double sd = 0.0;
};

// Prompt-wise table: per prompt the trait-averaged QWK, averaged over
// seeds; SD is the per-prompt deviation over seeds, averaged.
inline std::vector<ReportRow> prompt_table(const std::vector<RunResult>& runs) {
  std::map<std::string, std::map<int, std::vector<double>>> by_model;
  std::set<int> targets;
  for (const auto& r : runs) {
    by_model[r.model][r.target].push_back(mean_of(r.qwk));
    targets.insert(r.target);
  }
  std::vector<ReportRow> rows;
  for (auto& [model, per_target] : by_model) {
    ReportRow row;
    row.model = model;
    double sum = 0.0, sd = 0.0;
    int n = 0;
    for (int t : targets) {
      const auto key = std::to_string(t);
      row.columns.push_back(key);
      auto it = per_target.find(t);
      if (it == per_target.end()) {
        row.mean[key] = std::nullopt;
        continue;
      }
      auto v = it->second;
      double m = 0.0;
      for (double x : v) m += x;
      m /= static_cast<double>(v.size());
      row.mean[key] = m;
      sum += m;
      sd += population_sd(v);
      ++n;
    }
    row.avg = n ? sum / n : 0.0;
    row.sd = n ? sd / n : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

// Trait-wise table: per trait the prompt-averaged QWK, averaged over seeds;
// SD is the per-trait deviation over seeds of that prompt average, averaged.
inline std::vector<ReportRow> trait_table(const std::vector<RunResult>& runs, const std::vector<std::string>& order) {
  // model -> trait -> seed -> values over prompts
  std::map<std::string, std::map<std::string, std::map<std::uint64_t, std::vector<double>>>> acc;
  for (const auto& r : runs) {
    for (const auto& [trait, v] : r.qwk) acc[r.model][trait][r.seed].push_back(v);
  }
  std::vector<ReportRow> rows;
  for (auto& [model, per_trait] : acc) {
    ReportRow row;
    row.model = model;
    double sum = 0.0, sd = 0.0;
    int n = 0;
    for (const auto& trait : order) {
      auto it = per_trait.find(trait);
      if (it == per_trait.end()) continue;
      row.columns.push_back(trait);
      std::vector<double> per_seed;
      for (const auto& [seed, vals] : it->second) {
        double m = 0.0;
        for (double x : vals) m += x;
        per_seed.push_back(m / static_cast<double>(vals.size()));
      }
      double m = 0.0;
      for (double x : per_seed) m += x;
      m /= static_cast<double>(per_seed.size());
      row.mean[trait] = m;
      sum += m;
      sd += population_sd(per_seed);
      ++n;
    }
    row.avg = n ? sum / n : 0.0;
    row.sd = n ? sd / n : 0.0;
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_cell(std::optional<double> v, int precision = 3) {
  if (!v) return "";
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(precision);
  ss << *v;
  return ss.str();
}

inline void write_report_csv(const std::vector<ReportRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path.string());
  std::vector<std::string> cols;
  for (const auto& r : rows) {
    for (const auto& c : r.columns) {
      if (std::find(cols.begin(), cols.end(), c) == cols.end()) cols.push_back(c);
    }
  }
  out << "model";
  for (const auto& c : cols) out << ',' << c;
  out << ",AVG,SD\n";
  for (const auto& r : rows) {
    out << r.model;
    for (const auto& c : cols) {
      auto it = r.mean.find(c);
      out << ',' << (it == r.mean.end() ? "" : format_cell(it->second));
    }
    out << ',' << format_cell(r.avg) << ',' << format_cell(r.sd) << '\n';
  }
}

// ---------------------------------------------------------------- analysis

struct RelationMatrix {
  std::vector<int> prompts;         // prompts sharing this trait set
  std::vector<std::string> traits;
  std::vector<std::vector<std::optional<double>>> pcc;
  std::vector<std::vector<std::optional<double>>> cosine;
};

// Gold-score PCC and cosine between every trait pair, per group of prompts
// with identical trait composition, over co-rated essays.
inline std::vector<RelationMatrix> analyze_trait_relations(const std::vector<EssayRecord>& records,
                                                           const PromptSet& prompts) {
  std::map<std::vector<std::string>, std::vector<int>> groups;
  for (const auto& p : prompts.prompts) groups[p.traits].push_back(p.prompt_id);
  std::vector<RelationMatrix> out;
  for (const auto& [traits, ids] : groups) {
    RelationMatrix rm;
    rm.prompts = ids;
    rm.traits = traits;
    const std::set<int> members(ids.begin(), ids.end());
    const auto n = traits.size();
    rm.pcc.assign(n, std::vector<std::optional<double>>(n));
    rm.cosine.assign(n, std::vector<std::optional<double>>(n));
    std::vector<std::size_t> col(n);
    for (std::size_t a = 0; a < n; ++a) col[a] = prompts.registry.index(traits[a]);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a; b < n; ++b) {
        std::vector<double> u, v;
        for (const auto& r : records) {
          if (!members.count(r.prompt_id)) continue;
          const auto& ga = r.gold_raw[col[a]];
          const auto& gb = r.gold_raw[col[b]];
          if (!ga || !gb) continue;
          u.push_back(*ga);
          v.push_back(*gb);
        }
        if (u.size() < 2) continue;
        const Vector uu = Eigen::Map<const Vector>(u.data(), static_cast<Eigen::Index>(u.size()));
        const Vector vv = Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
        auto p = a == b ? std::optional<double>(1.0) : pearson(uu, vv);
        auto c = a == b ? std::optional<double>(1.0) : cosine(uu, vv);
        rm.pcc[a][b] = rm.pcc[b][a] = p;
        rm.cosine[a][b] = rm.cosine[b][a] = c;
      }
    }
    out.push_back(std::move(rm));
  }
  return out;
}

inline double mean_off_diagonal(const std::vector<std::vector<std::optional<double>>>& m) {
  double s = 0.0;
  int n = 0;
  for (std::size_t a = 0; a < m.size(); ++a) {
    for (std::size_t b = 0; b < m.size(); ++b) {
      if (a != b && m[a][b]) {
        s += *m[a][b];
        ++n;
      }
    }
  }
  return n ? s / n : 0.0;
}

inline void write_matrix_csv(const std::vector<std::string>& labels,
                             const std::vector<std::vector<std::optional<double>>>& m, std::ostream& out) {
  out << "trait";
  for (const auto& l : labels) out << ',' << l;
  out << '\n';
  for (std::size_t a = 0; a < labels.size(); ++a) {
    out << labels[a];
    for (std::size_t b = 0; b < labels.size(); ++b) out << ',' << format_cell(m[a][b], 6);
    out << '\n';
  }
}

// Linear-interpolation quantile of sorted values.
inline double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct BoxRow {
  int score = 0;
  std::size_t count = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0;
};

// TC distribution per integer gold score of one trait. Only essays of
// `prompt_filter` (when non-empty) are considered.
inline std::vector<BoxRow> analyze_tc_by_trait(const std::unordered_map<long, double>& tc,
                                              const std::vector<EssayRecord>& records, std::size_t trait,
                                              const std::set<int>& prompt_filter = {}) {
  std::map<int, std::vector<double>> levels;
  for (const auto& r : records) {
    if (!prompt_filter.empty() && !prompt_filter.count(r.prompt_id)) continue;
    if (trait >= r.gold_raw.size() || !r.gold_raw[trait]) continue;
    auto it = tc.find(r.essay_id);
    if (it == tc.end()) continue;
    levels[*r.gold_raw[trait]].push_back(it->second);
  }
  std::vector<BoxRow> out;
  for (auto& [score, v] : levels) {
    std::sort(v.begin(), v.end());
    out.push_back({score, v.size(), v.front(), quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), v.back()});
  }
  return out;
}

}  // namespace protact
