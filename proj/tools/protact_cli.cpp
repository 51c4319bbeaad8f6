// protact: prepare / features / train / evaluate / analyze / reproduce-ablation / synth

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "protact/protact.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace protact;

namespace {

constexpr const char* kCacheEnv = "PROTACT_CACHE_ROOT";

std::string now_iso() {
  const auto t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

fs::path default_root() {
  if (const char* env = std::getenv(kCacheEnv); env && *env) return env;
  return "protact_cache";
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot read " + p.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
  return j;
}

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

fs::path target_dir(const fs::path& root, int target) { return root / ("target_" + std::to_string(target)); }
fs::path prepared_dir(const fs::path& root, int target) { return target_dir(root, target) / "prepared"; }
fs::path seed_dir(const fs::path& root, int target, std::uint64_t seed) {
  return target_dir(root, target) / ("seed_" + std::to_string(seed));
}

// ---------------------------------------------------------------- manifests

struct Manifest {
  std::string command;
  std::string config_hash;
  std::map<std::string, std::string> inputs;  // name -> sha256
  std::optional<std::uint64_t> seed;
  std::optional<int> target;
  fs::path out;
  std::string started = now_iso();
  json extra = json::object();
};

bool up_to_date(const Manifest& m) {
  const auto path = m.out / "manifest.json";
  if (!fs::exists(path)) return false;
  json j;
  try {
    j = read_json(path);
  } catch (const DataError&) {
    return false;
  }
  if (j.value("command", "") != m.command || j.value("config_hash", "") != m.config_hash) return false;
  if (j.value("inputs", json::object()) != json(m.inputs)) return false;
  const json outputs = j.value("outputs", json::object());
  for (const auto& [name, hash] : outputs.items()) {
    const auto f = m.out / name;
    if (!fs::exists(f) || sha256_file(f) != hash.get<std::string>()) return false;
  }
  return true;
}

void finish(const Manifest& m, const std::vector<std::string>& outputs) {
  json j;
  j["command"] = m.command;
  j["config_hash"] = m.config_hash;
  j["inputs"] = m.inputs;
  if (m.seed) j["seed"] = *m.seed;
  if (m.target) j["target"] = *m.target;
  j["output_dir"] = fs::absolute(m.out).string();
  j["started"] = m.started;
  j["finished"] = now_iso();
  json outs = json::object();
  for (const auto& name : outputs) {
    const auto f = m.out / name;
    if (!fs::exists(f)) throw DataError("declared output missing: " + f.string());
    outs[name] = sha256_file(f);
  }
  j["outputs"] = outs;
  for (const auto& [k, v] : m.extra.items()) j[k] = v;
  write_json(m.out / "manifest.json", j);
}

// ------------------------------------------------------------------ prepare

fs::path tagger_dir() {
  if (const char* env = std::getenv("PROTACT_DATA_DIR"); env && *env) return fs::path(env) / "tagger";
  return fs::path(PROTACT_DATA_DIR) / "tagger";
}

json doc_to_json(const TokenizedDoc& d) {
  json pos = json::array(), words = json::array();
  for (int s = 0; s < d.n_sentences; ++s) {
    std::vector<int> p, w;
    for (int k = 0; k < d.n_words[static_cast<std::size_t>(s)]; ++k) {
      p.push_back(d.pos_at(s, k));
      w.push_back(d.word_at(s, k));
    }
    pos.push_back(p);
    words.push_back(w);
  }
  return {{"max_sentences", d.max_sentences}, {"max_words", d.max_words}, {"pos", pos}, {"words", words}};
}

TokenizedDoc doc_from_json(const json& j) {
  TokenizedDoc d;
  d.max_sentences = j.at("max_sentences");
  d.max_words = j.at("max_words");
  const auto cells = static_cast<std::size_t>(d.max_sentences * d.max_words);
  d.pos_ids.assign(cells, Vocab::kPad);
  d.word_ids.assign(cells, Vocab::kPad);
  const auto& pos = j.at("pos");
  const auto& words = j.at("words");
  d.n_sentences = static_cast<int>(pos.size());
  for (int s = 0; s < d.n_sentences; ++s) {
    const auto& ps = pos[static_cast<std::size_t>(s)];
    const auto& ws = words[static_cast<std::size_t>(s)];
    d.n_words.push_back(static_cast<int>(ps.size()));
    for (std::size_t k = 0; k < ps.size(); ++k) {
      d.pos_ids[static_cast<std::size_t>(s * d.max_words) + k] = ps[k];
      d.word_ids[static_cast<std::size_t>(s * d.max_words) + k] = ws[k];
    }
  }
  return d;
}

struct Inputs {
  fs::path data;
  fs::path prompts;
  PromptSet prompt_set;
  std::vector<EssayRecord> records;
};

Inputs load_inputs(const fs::path& data, const fs::path& prompts) {
  Inputs in;
  in.data = fs::absolute(data);
  in.prompts = fs::absolute(prompts);
  if (!fs::exists(in.prompts)) throw ConfigError("--prompts: file not found: " + prompts.string());
  if (!fs::exists(in.data)) throw DataError("--data: file not found: " + data.string());
  in.prompt_set = load_prompts(in.prompts);
  in.records = load_dataset(in.data, in.prompt_set);
  if (in.records.empty()) throw DataError("dataset has no essays");
  return in;
}

int cmd_prepare(const fs::path& root, const fs::path& data, const fs::path& prompts, std::vector<int> targets,
                bool all_targets, bool force, const RunConfig& cfg) {
  auto in = load_inputs(data, prompts);
  if (all_targets) targets = in.prompt_set.ids();
  if (targets.empty()) throw ConfigError("prepare needs --target or --all-targets");
  std::optional<BrillTagger> tagger;
  std::unordered_map<long, TaggedDoc> tagged;
  std::map<int, TaggedDoc> tagged_prompts;
  const std::map<std::string, std::string> hashes = {{"dataset", sha256_file(in.data)},
                                                     {"prompts", sha256_file(in.prompts)}};
  const json caps = {{"max_sentences", cfg.data.length_caps.max_sentences},
                     {"max_words", cfg.data.length_caps.max_words}};
  for (int target : targets) {
    if (!in.prompt_set.has(target)) throw ConfigError("--target " + std::to_string(target) + " is not a prompt id");
    Manifest m;
    m.command = "prepare";
    m.config_hash = sha256_hex(caps.dump());
    m.inputs = hashes;
    m.target = target;
    m.out = prepared_dir(root, target);
    m.extra = {{"dataset_path", in.data.string()}, {"prompts_path", in.prompts.string()}, {"length_caps", caps}};
    if (!force && up_to_date(m)) {
      std::cout << "target " << target << ": up to date\n";
      continue;
    }
    if (!tagger) {
      tagger = BrillTagger::load(tagger_dir());
      tagged = tag_records(in.records, *tagger);
      tagged_prompts = tag_prompts(in.prompt_set, *tagger);
    }
    std::vector<long> vocab_ids;
    for (const auto& r : in.records) {
      if (r.prompt_id != target) vocab_ids.push_back(r.essay_id);
    }
    if (vocab_ids.empty()) throw DataError("no essays outside target prompt " + std::to_string(target));
    auto pc = prepare_corpus(in.records, in.prompt_set, tagged, tagged_prompts, vocab_ids, cfg.data.length_caps);
    fs::create_directories(m.out);
    pc.vocabs.pos.save(m.out / "pos_vocab.txt");
    pc.vocabs.word.save(m.out / "word_vocab.txt");
    std::ofstream out(m.out / "corpus.jsonl");
    std::vector<long> ids;
    for (const auto& r : in.records) ids.push_back(r.essay_id);
    std::sort(ids.begin(), ids.end());
    for (const auto& [pid, d] : pc.prompt_docs) out << json{{"prompt_id", pid}, {"doc", doc_to_json(d)}}.dump() << '\n';
    for (long id : ids) out << json{{"essay_id", id}, {"doc", doc_to_json(pc.docs.at(id))}}.dump() << '\n';
    out.close();
    m.extra["limits"] = {{"max_sentences", pc.limits.max_sentences}, {"max_words", pc.limits.max_words}};
    finish(m, {"pos_vocab.txt", "word_vocab.txt", "corpus.jsonl"});
    std::cout << "target " << target << ": prepared " << ids.size() << " essays, " << pc.vocabs.pos.size()
              << " POS ids, " << pc.vocabs.word.size() << " word ids -> " << m.out.string() << '\n';
  }
  return 0;
}

struct Prepared {
  json manifest;
  Inputs inputs;
  PreparedCorpus corpus;
  std::string pos_hash, word_hash;
};

Prepared load_prepared(const fs::path& root, int target) {
  const auto dir = prepared_dir(root, target);
  if (!fs::exists(dir / "manifest.json")) {
    throw DataError("no prepared cache for target " + std::to_string(target) + " under " + root.string() +
                    "; run `protact prepare` first");
  }
  Prepared p;
  p.manifest = read_json(dir / "manifest.json");
  p.inputs = load_inputs(p.manifest.at("dataset_path").get<std::string>(),
                         p.manifest.at("prompts_path").get<std::string>());
  if (sha256_file(p.inputs.data) != p.manifest["inputs"]["dataset"] ||
      sha256_file(p.inputs.prompts) != p.manifest["inputs"]["prompts"]) {
    throw DataError("dataset or prompts changed since prepare; rerun `protact prepare`");
  }
  p.corpus.vocabs.pos = Vocab::load(VocabKind::pos, dir / "pos_vocab.txt");
  p.corpus.vocabs.word = Vocab::load(VocabKind::word, dir / "word_vocab.txt");
  p.pos_hash = p.corpus.vocabs.pos.hash();
  p.word_hash = p.corpus.vocabs.word.hash();
  p.corpus.limits = {p.manifest["limits"]["max_sentences"], p.manifest["limits"]["max_words"]};
  std::ifstream in(dir / "corpus.jsonl");
  std::string line;
  while (std::getline(in, line)) {
    auto j = json::parse(line);
    if (j.contains("prompt_id")) {
      p.corpus.prompt_docs.emplace(j["prompt_id"].get<int>(), doc_from_json(j["doc"]));
    } else {
      p.corpus.docs.emplace(j["essay_id"].get<long>(), doc_from_json(j["doc"]));
    }
  }
  return p;
}

// ----------------------------------------------------------------- features

fs::path features_dir(const fs::path& root, int target, std::uint64_t seed, bool no_tc) {
  return seed_dir(root, target, seed) / (no_tc ? "features-no-tc" : "features");
}

fs::path ensure_features(const fs::path& root, int target, std::uint64_t seed, const RunConfig& cfg,
                         const std::string& handcrafted, bool no_tc, bool force, bool quiet = false) {
  const auto prep_manifest = read_json(prepared_dir(root, target) / "manifest.json");
  Manifest m;
  m.command = "features";
  m.target = target;
  m.seed = seed;
  m.out = features_dir(root, target, seed, no_tc);
  m.inputs = prep_manifest.at("inputs").get<std::map<std::string, std::string>>();
  if (!handcrafted.empty()) m.inputs["handcrafted"] = sha256_file(handcrafted);
  const json settings = {{"dev_fraction", cfg.train.dev_fraction},
                         {"passes_train", cfg.lda.passes_train},
                         {"passes_test", cfg.lda.passes_test},
                         {"tc", !no_tc}};
  m.config_hash = sha256_hex(settings.dump());
  if (!force && up_to_date(m)) {
    if (!quiet) std::cout << "features for target " << target << " seed " << seed << ": up to date\n";
    return m.out / "features.csv";
  }
  auto in = load_inputs(prep_manifest.at("dataset_path").get<std::string>(),
                        prep_manifest.at("prompts_path").get<std::string>());
  const auto plan = split_cross_prompt(in.records, target, cfg.train.dev_fraction, seed);
  const auto fit_ids = plan.train_ids;
  HandcraftedTable table;
  if (!handcrafted.empty()) {
    table = load_handcrafted(handcrafted, fit_ids);
  } else {
    log_warn("no handcrafted feature file; using the built-in surface statistics");
    table = fallback_table(in.records, fit_ids);
  }
  std::unordered_map<long, double> tc;
  if (!no_tc) tc = topic_features(plan, in.records, {cfg.lda.passes_train, cfg.lda.passes_test, seed});
  const auto fs_ = build_feature_vectors(plan, table, no_tc ? nullptr : &tc);
  fs::create_directories(m.out);
  save_features(fs_, m.out / "features.csv");
  write_json(m.out / "split.json", to_json(plan));
  m.extra = {{"settings", settings}, {"handcrafted_source", handcrafted.empty() ? "builtin" : handcrafted}};
  finish(m, {"features.csv", "split.json"});
  if (!quiet) {
    std::cout << "features for target " << target << " seed " << seed << ": " << fs_.rows.size() << " rows, "
              << fs_.dim() << " columns -> " << (m.out / "features.csv").string() << '\n';
  }
  return m.out / "features.csv";
}

// -------------------------------------------------------------------- train

struct Ablation {
  bool no_prompt_attention = false;
  bool no_tc = false;
  bool no_ts = false;

  std::string label() const {
    if (no_prompt_attention && no_tc && no_ts) return "MSA";
    if (!no_prompt_attention && no_tc && no_ts) return "MSA+EPA";
    if (!no_prompt_attention && !no_tc && no_ts) return "MSA+EPA+TC";
    std::string s = "ProTACT";
    if (no_prompt_attention) s += "-no-prompt-attention";
    if (no_tc) s += "-no-tc";
    if (no_ts) s += "-no-ts";
    return s;
  }
  void apply(RunConfig& c) const {
    if (no_prompt_attention) c.model.use_prompt_attention = false;
    if (no_tc) c.model.use_tc_feature = false;
    if (no_ts) c.loss.use_ts_loss = c.model.use_ts_loss = false;
  }
};

Ablation parse_ablation(const std::string& spec) {
  Ablation a;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (item.empty()) continue;
    if (item == "no-prompt-attention") a.no_prompt_attention = true;
    else if (item == "no-tc") a.no_tc = true;
    else if (item == "no-ts") a.no_ts = true;
    else throw ConfigError("--ablate: unknown component '" + item + "'");
  }
  return a;
}

struct Evaluated {
  RunResult result;
  Matrix predictions;
  std::vector<const EssayRecord*> records;
};

Evaluated evaluate_model(const ProtactModel& model, const Prepared& p, const FeatureSet& features,
                         const SplitPlan& plan, const RunConfig& cfg, const std::string& label) {
  auto test = make_dataset(plan.test_ids, p.inputs.records, p.corpus.docs, features, model.config().use_tc_feature);
  Evaluated e;
  e.predictions = predict(model, test, p.corpus.prompt_docs);
  e.records = test.records;
  e.result.model = label;
  e.result.target = plan.target_prompt;
  e.result.seed = plan.seed;
  e.result.qwk = trait_qwks(test.records, e.predictions, p.inputs.prompt_set, cfg.train.rounding);
  const auto& spec = p.inputs.prompt_set.get(plan.target_prompt);
  for (const auto& t : spec.traits) {
    if (!e.result.qwk.count(t)) log_info("trait " + t + " has no rated essays in target prompt; omitted");
  }
  return e;
}

void write_evaluation(const fs::path& dir, const Evaluated& e, const PromptSet& prompts, RoundingMode rounding) {
  write_json(dir / "result.json", to_json(e.result));
  {
    std::ofstream out(dir / "test_qwk.csv");
    out << "trait,qwk\n";
    for (const auto& [t, v] : e.result.qwk) out << t << ',' << format_cell(v, 6) << '\n';
    out << "AVG," << format_cell(mean_of(e.result.qwk), 6) << '\n';
  }
  std::ofstream out(dir / "predictions.csv");
  const auto& names = prompts.registry.names();
  out << "essay_id,prompt_id";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < e.records.size(); ++i) {
    const auto* r = e.records[i];
    const auto& spec = prompts.get(r->prompt_id);
    out << r->essay_id << ',' << r->prompt_id;
    for (std::size_t j = 0; j < names.size(); ++j) {
      out << ',';
      if (spec.rates(names[j])) {
        out << to_rating(e.predictions(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)),
                         spec.range(names[j]), rounding);
      }
    }
    out << '\n';
  }
}

int cmd_train_one(const fs::path& root, int target, std::uint64_t seed, RunConfig cfg, const Ablation& ablation,
                  const std::string& handcrafted, bool force, std::optional<int> epochs_override) {
  ablation.apply(cfg);
  if (epochs_override) cfg.train.epochs = *epochs_override;
  const auto label = ablation.label();
  const auto prepared = load_prepared(root, target);
  const auto features_path = ensure_features(root, target, seed, cfg, handcrafted, false, false, true);
  const auto features = load_features(features_path);
  const auto plan = split_from_json(read_json(features_path.parent_path() / "split.json"));

  Manifest m;
  m.command = "train";
  m.target = target;
  m.seed = seed;
  m.out = seed_dir(root, target, seed) / label;
  m.config_hash = config_hash(cfg);
  m.inputs = {{"pos_vocab", prepared.pos_hash}, {"word_vocab", prepared.word_hash},
              {"features", sha256_file(features_path)}};
  if (!cfg.paths.word_embeddings.empty()) m.inputs["word_embeddings"] = sha256_file(cfg.paths.word_embeddings);
  if (!force && up_to_date(m)) {
    std::cout << label << " target " << target << " seed " << seed << ": up to date\n";
    return 0;
  }
  fs::create_directories(m.out);

  const int hand_dim = features.dim() - (features.has_tc ? 1 : 0);
  const auto word_table = prompt_word_table(prepared.corpus.vocabs.word, cfg.paths.word_embeddings,
                                            cfg.model.pos_dim, seed);
  const auto mc = sized_model_config(cfg.model, prepared.inputs.prompt_set, prepared.corpus.vocabs, hand_dim,
                                     word_table.dim);
  ProtactModel model(mc, seed);
  model.set_word_embeddings(word_table.matrix);

  const auto train_set = make_dataset(plan.train_ids, prepared.inputs.records, prepared.corpus.docs, features,
                                      mc.use_tc_feature);
  const auto dev_set = make_dataset(plan.dev_ids, prepared.inputs.records, prepared.corpus.docs, features,
                                    mc.use_tc_feature);
  TrainOptions opt;
  opt.epochs = cfg.train.epochs;
  opt.batch_size = cfg.train.batch_size;
  opt.rmsprop = cfg.train.rmsprop;
  opt.rounding = cfg.train.rounding;
  opt.seed = seed;
  opt.on_epoch = [&](const EpochLog& e) {
    log_info(label + " t" + std::to_string(target) + " s" + std::to_string(seed) + " epoch " +
             std::to_string(e.epoch) + " loss " + std::to_string(e.total) + " dev qwk " +
             std::to_string(e.dev_mean_qwk));
  };
  const auto state = train(model, train_set, dev_set, prepared.corpus.prompt_docs, prepared.inputs.prompt_set,
                           cfg.loss, opt);
  restore_best(model, state);
  {
    std::ofstream log(m.out / "train_log.csv");
    write_train_log(state, log);
  }
  Checkpoint ck;
  ck.config_json = canonical_json(to_json(cfg));
  ck.config_hash = m.config_hash;
  ck.meta = {{"model", canonical_json(to_json(mc))},
             {"label", label},
             {"target", std::to_string(target)},
             {"seed", std::to_string(seed)},
             {"best_epoch", std::to_string(state.best_epoch)},
             {"pos_vocab_hash", prepared.pos_hash},
             {"word_vocab_hash", prepared.word_hash},
             {"features_hash", m.inputs["features"]},
             {"root", fs::absolute(root).string()}};
  store_tensors(model.params(), ck);
  ck.tensors.emplace_back("frozen.word_embedding", model.word_embeddings());
  save_checkpoint(ck, m.out / "checkpoint.bin");

  const auto ev = evaluate_model(model, prepared, features, plan, cfg, label);
  write_evaluation(m.out, ev, prepared.inputs.prompt_set, cfg.train.rounding);
  m.extra = {{"label", label}, {"best_epoch", state.best_epoch}, {"best_dev_mean_qwk", state.best_dev_qwk}};
  finish(m, {"checkpoint.bin", "train_log.csv", "result.json", "test_qwk.csv", "predictions.csv"});
  std::cout << label << " target " << target << " seed " << seed << ": best epoch " << state.best_epoch
            << ", test mean QWK " << format_cell(mean_of(ev.result.qwk), 4) << " -> " << m.out.string() << '\n';
  return 0;
}

// Runs argument vectors as child processes of this executable, at most
// `jobs` at a time. Returns the first nonzero exit status seen, if any.
int run_pool(const std::vector<std::vector<std::string>>& tasks, int jobs) {
  jobs = std::max(jobs, 1);
  std::deque<std::size_t> pending;
  for (std::size_t i = 0; i < tasks.size(); ++i) pending.push_back(i);
  std::map<pid_t, std::size_t> running;
  int worst = 0;
  auto spawn = [&](std::size_t i) {
    std::vector<char*> argv;
    static std::string self = "protact";
    argv.push_back(self.data());
    for (const auto& a : tasks[i]) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    const pid_t pid = fork();
    if (pid < 0) throw std::runtime_error("fork failed");
    if (pid == 0) {
      execv("/proc/self/exe", argv.data());
      _exit(127);
    }
    running.emplace(pid, i);
  };
  while (!pending.empty() || !running.empty()) {
    while (!pending.empty() && static_cast<int>(running.size()) < jobs) {
      spawn(pending.front());
      pending.pop_front();
    }
    int status = 0;
    const pid_t pid = waitpid(-1, &status, 0);
    if (pid < 0) break;
    const auto i = running.at(pid);
    running.erase(pid);
    const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 1;
    if (code != 0) {
      std::string cmd;
      for (const auto& a : tasks[i]) cmd += " " + a;
      std::cerr << "worker failed (exit " << code << "):" << cmd << '\n';
      if (worst == 0) worst = code;
    }
  }
  return worst;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = detail::trim(item);
    if (item.empty()) continue;
    try {
      out.push_back(std::stoull(item));
    } catch (const std::exception&) {
      throw ConfigError("--seeds: not an integer: " + item);
    }
  }
  if (out.empty()) throw ConfigError("--seeds is empty");
  return out;
}

std::vector<int> prepared_targets(const fs::path& root) {
  std::vector<int> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::directory_iterator(root)) {
    const auto name = e.path().filename().string();
    if (name.rfind("target_", 0) == 0 && fs::exists(e.path() / "prepared" / "manifest.json")) {
      out.push_back(std::stoi(name.substr(7)));
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ----------------------------------------------------------------- evaluate

int cmd_evaluate_checkpoint(const fs::path& path) {
  const auto ck = load_checkpoint(path);
  const auto cfg = run_config_from_json(json::parse(ck.config_json));
  if (config_hash(cfg) != ck.config_hash) {
    throw ConfigError("checkpoint config hash does not match its stored configuration");
  }
  const fs::path root = ck.meta.at("root");
  const int target = std::stoi(ck.meta.at("target"));
  const std::uint64_t seed = std::stoull(ck.meta.at("seed"));
  const auto prepared = load_prepared(root, target);
  if (prepared.pos_hash != ck.meta.at("pos_vocab_hash") || prepared.word_hash != ck.meta.at("word_vocab_hash")) {
    throw ConfigError("refusing to evaluate: vocabulary cache under " + prepared_dir(root, target).string() +
                      " differs from the one the checkpoint was trained with");
  }
  const auto features_path = features_dir(root, target, seed, false) / "features.csv";
  if (!fs::exists(features_path) || sha256_file(features_path) != ck.meta.at("features_hash")) {
    throw ConfigError("refusing to evaluate: feature cache " + features_path.string() +
                      " differs from the one the checkpoint was trained with");
  }
  ModelConfig mc;
  merge_json(mc, json::parse(ck.meta.at("model")));
  ProtactModel model(mc, seed);
  restore_tensors(ck, model.params());
  model.set_word_embeddings(ck.tensor("frozen.word_embedding"));
  const auto features = load_features(features_path);
  const auto plan = split_from_json(read_json(features_path.parent_path() / "split.json"));
  const auto ev = evaluate_model(model, prepared, features, plan, cfg, ck.meta.at("label"));
  const auto dir = path.parent_path();
  write_evaluation(dir, ev, prepared.inputs.prompt_set, cfg.train.rounding);
  std::cout << "target " << target << " seed " << seed << ": test mean QWK " << format_cell(mean_of(ev.result.qwk), 4)
            << " -> " << (dir / "test_qwk.csv").string() << '\n';
  return 0;
}

const std::vector<std::string>& trait_order() {
  static const std::vector<std::string> order = {"Overall",          "Content",     "Organization",
                                                 "Word Choice",      "Sentence Fluency", "Conventions",
                                                 "Prompt Adherence", "Language",    "Narrativity"};
  return order;
}

int cmd_aggregate(const fs::path& dir, const fs::path& out_dir, const std::string& prefix) {
  std::vector<RunResult> runs;
  if (!fs::exists(dir)) throw DataError("--aggregate: no such directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.path().filename() == "result.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) runs.push_back(run_result_from_json(read_json(f)));
  if (runs.empty()) throw DataError("no result.json files under " + dir.string());
  std::vector<std::string> order = trait_order();
  for (const auto& r : runs) {
    for (const auto& [t, v] : r.qwk) {
      if (std::find(order.begin(), order.end(), t) == order.end()) order.push_back(t);
    }
  }
  fs::create_directories(out_dir);
  write_report_csv(prompt_table(runs), out_dir / (prefix + "prompt_report.csv"));
  write_report_csv(trait_table(runs, order), out_dir / (prefix + "trait_report.csv"));
  std::cout << "aggregated " << runs.size() << " runs -> " << (out_dir / (prefix + "prompt_report.csv")).string()
            << ", " << (out_dir / (prefix + "trait_report.csv")).string() << '\n';
  return 0;
}

// ------------------------------------------------------------------ analyze

int cmd_analyze(const std::string& what, const fs::path& root, const fs::path& data, const fs::path& prompts,
                const fs::path& out_dir, int target, std::uint64_t seed, const std::string& trait,
                const std::string& split, int passes) {
  fs::create_directories(out_dir);
  if (what == "trait-relations") {
    auto in = load_inputs(data, prompts);
    const auto mats = analyze_trait_relations(in.records, in.prompt_set);
    json summary = json::array();
    for (const auto& m : mats) {
      std::string tag = "prompts";
      for (int p : m.prompts) tag += "_" + std::to_string(p);
      std::ofstream pcc(out_dir / ("trait_pcc_" + tag + ".csv"));
      write_matrix_csv(m.traits, m.pcc, pcc);
      std::ofstream cos(out_dir / ("trait_cosine_" + tag + ".csv"));
      write_matrix_csv(m.traits, m.cosine, cos);
      summary.push_back({{"prompts", m.prompts},
                         {"mean_off_diagonal_pcc", mean_off_diagonal(m.pcc)},
                         {"mean_off_diagonal_cosine", mean_off_diagonal(m.cosine)}});
      std::cout << tag << ": mean PCC " << format_cell(mean_off_diagonal(m.pcc), 3) << ", mean cosine "
                << format_cell(mean_off_diagonal(m.cosine), 3) << '\n';
    }
    write_json(out_dir / "trait_relations_summary.json", summary);
    return 0;
  }
  if (what == "tc-box") {
    const auto fpath = features_dir(root, target, seed, false) / "features.csv";
    if (!fs::exists(fpath)) throw DataError("no feature cache at " + fpath.string() + "; run `protact features`");
    const auto features = load_features(fpath);
    if (!features.has_tc) throw DataError("feature cache has no tc column");
    const auto plan = split_from_json(read_json(fpath.parent_path() / "split.json"));
    const auto prep = read_json(prepared_dir(root, target) / "manifest.json");
    auto in = load_inputs(prep.at("dataset_path").get<std::string>(), prep.at("prompts_path").get<std::string>());
    const auto j = in.prompt_set.registry.find(trait);
    if (!j) throw ConfigError("--trait: unknown trait " + trait);
    std::set<long> ids;
    if (split == "train" || split == "all") ids.insert(plan.train_ids.begin(), plan.train_ids.end());
    if (split == "dev" || split == "all") ids.insert(plan.dev_ids.begin(), plan.dev_ids.end());
    if (split == "test" || split == "all") ids.insert(plan.test_ids.begin(), plan.test_ids.end());
    if (ids.empty()) throw ConfigError("--split must be train, dev, test or all");
    std::unordered_map<long, double> tc;
    for (long id : ids) tc[id] = features.at(id)(features.dim() - 1);
    const auto rows = analyze_tc_by_trait(tc, in.records, *j);
    auto name = trait;
    std::replace(name.begin(), name.end(), ' ', '_');
    std::ofstream out(out_dir / ("tc_box_" + name + "_" + split + ".csv"));
    out << "score,count,min,q1,median,q3,max\n";
    for (const auto& r : rows) {
      out << r.score << ',' << r.count << ',' << format_cell(r.min, 6) << ',' << format_cell(r.q1, 6) << ','
          << format_cell(r.median, 6) << ',' << format_cell(r.q3, 6) << ',' << format_cell(r.max, 6) << '\n';
    }
    std::cout << rows.size() << " score levels -> " << (out_dir / ("tc_box_" + name + "_" + split + ".csv")).string()
              << '\n';
    return 0;
  }
  if (what == "topic-agreement") {
    auto in = load_inputs(data, prompts);
    std::vector<std::vector<std::string>> docs;
    std::vector<int> pids;
    for (const auto& r : in.records) {
      docs.push_back(topic_tokens(r.text));
      pids.push_back(r.prompt_id);
    }
    const auto model = TopicModel::fit(docs, static_cast<int>(in.prompt_set.prompts.size()), {passes, seed});
    const auto agreement = topic_prompt_agreement(model, docs, pids);
    std::ofstream out(out_dir / "topic_agreement.csv");
    out << "prompt,agreement\n";
    for (const auto& [p, v] : agreement.per_prompt) out << p << ',' << format_cell(v, 4) << '\n';
    out << "AVG," << format_cell(agreement.average, 4) << '\n';
    std::cout << "topic-prompt agreement average " << format_cell(agreement.average, 3) << " -> "
              << (out_dir / "topic_agreement.csv").string() << '\n';
    return 0;
  }
  throw ConfigError("--what must be trait-relations, tc-box or topic-agreement");
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return static_cast<int>(ExitCode::config_error);
  if (dynamic_cast<const DataError*>(&e)) return static_cast<int>(ExitCode::data_error);
  if (dynamic_cast<const NumericError*>(&e)) return static_cast<int>(ExitCode::numeric_error);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt- and trait-relation-aware cross-prompt essay trait scoring"};
  app.require_subcommand(1);
  std::string root_flag;
  bool verbose = false, quiet = false;
  app.add_option("--root", root_flag, std::string("cache root (default $") + kCacheEnv + " or ./protact_cache)");
  app.add_flag("-v,--verbose", verbose, "log progress to stderr");
  app.add_flag("-q,--quiet", quiet, "suppress warnings");

  std::string data, prompts, config_path, handcrafted, ablate, seeds_flag, what, trait, split = "train", out_dir;
  std::string checkpoint, aggregate_dir;
  std::vector<int> targets;
  int target = 0, jobs = 1, passes_train = 12, passes_test = 15, passes = 15;
  std::optional<int> epochs;
  std::uint64_t seed = 42;
  bool all_targets = false, force = false, no_tc = false;

  auto* prepare = app.add_subcommand("prepare", "tag, build vocabularies and encode the corpus per target prompt");
  prepare->add_option("--data", data, "essay TSV")->required();
  prepare->add_option("--prompts", prompts, "prompt spec JSON")->required();
  prepare->add_option("--target", targets, "held-out prompt id(s)");
  prepare->add_flag("--all-targets", all_targets, "prepare every prompt as a target");
  prepare->add_option("--config", config_path, "run config JSON");
  prepare->add_flag("--force", force, "rebuild even when up to date");

  auto* features = app.add_subcommand("features", "handcrafted + topic-coherence feature cache for one split");
  features->add_option("--target", target, "held-out prompt id")->required();
  features->add_option("--seed", seed, "split and LDA seed");
  features->add_option("--config", config_path, "run config JSON");
  features->add_option("--passes-train", passes_train, "LDA passes for the train/dev fit")->capture_default_str();
  features->add_option("--passes-test", passes_test, "LDA passes for the all-essay fit")->capture_default_str();
  features->add_option("--handcrafted", handcrafted, "CSV essay_id,f1..fF");
  features->add_flag("--no-tc", no_tc, "omit the topic-coherence column");
  features->add_flag("--force", force, "rebuild even when up to date");

  auto* trainc = app.add_subcommand("train", "train one (target, seed) run or fan out many");
  trainc->add_option("--target", target, "held-out prompt id");
  trainc->add_option("--seed", seed, "run seed");
  trainc->add_option("--config", config_path, "run config JSON");
  trainc->add_option("--ablate", ablate, "comma list of no-prompt-attention,no-tc,no-ts");
  trainc->add_option("--handcrafted", handcrafted, "CSV essay_id,f1..fF");
  trainc->add_option("--epochs", epochs, "override train.epochs");
  trainc->add_flag("--all-targets", all_targets, "run every prepared target");
  trainc->add_option("--seeds", seeds_flag, "comma list of seeds for fan-out");
  trainc->add_option("--jobs", jobs, "parallel workers for fan-out")->capture_default_str();
  trainc->add_flag("--force", force, "retrain even when up to date");

  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on its test prompt, or aggregate runs");
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint.bin of a run");
  evaluate->add_option("--aggregate", aggregate_dir, "directory tree of run results");
  evaluate->add_option("--out", out_dir, "report directory (default: the aggregate directory)");

  auto* analyze = app.add_subcommand("analyze", "analysis tables");
  analyze->add_option("--what", what, "trait-relations | tc-box | topic-agreement")->required();
  analyze->add_option("--data", data, "essay TSV");
  analyze->add_option("--prompts", prompts, "prompt spec JSON");
  analyze->add_option("--target", target, "target prompt (tc-box)");
  analyze->add_option("--seed", seed, "seed (tc-box, topic-agreement)");
  analyze->add_option("--trait", trait, "trait name (tc-box)");
  analyze->add_option("--split", split, "train | dev | test | all (tc-box)")->capture_default_str();
  analyze->add_option("--passes", passes, "LDA passes (topic-agreement)")->capture_default_str();
  analyze->add_option("--out", out_dir, "output directory")->required();

  auto* ablation = app.add_subcommand("reproduce-ablation", "train the incremental ablation variants and report");
  ablation->add_option("--config", config_path, "run config JSON");
  ablation->add_option("--seeds", seeds_flag, "comma list of seeds (default: config seeds)");
  ablation->add_option("--target", targets, "targets (default: all prepared)");
  ablation->add_option("--epochs", epochs, "override train.epochs");
  ablation->add_option("--jobs", jobs, "parallel workers")->capture_default_str();
  ablation->add_option("--out", out_dir, "report directory (default: <root>/ablation)");

  auto* synthc = app.add_subcommand("synth", "write a synthetic corpus (dataset TSV + prompt spec)");
  int per_prompt = 40, n_prompts = 8;
  synthc->add_option("--out", out_dir, "output directory")->required();
  synthc->add_option("--essays-per-prompt", per_prompt)->capture_default_str();
  synthc->add_option("--prompts", n_prompts, "number of prompts")->capture_default_str();
  synthc->add_option("--seed", seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::config_error);
  }
  set_log_level(quiet ? LogLevel::quiet : verbose ? LogLevel::info : LogLevel::warn);
  const fs::path root = root_flag.empty() ? default_root() : fs::path(root_flag);

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (*prepare) return cmd_prepare(root, data, prompts, targets, all_targets, force, cfg);
    if (*features) {
      if (features->count("--passes-train")) cfg.lda.passes_train = passes_train;
      if (features->count("--passes-test")) cfg.lda.passes_test = passes_test;
      if (handcrafted.empty()) handcrafted = cfg.paths.handcrafted;
      ensure_features(root, target, seed, cfg, handcrafted, no_tc, force);
      return 0;
    }
    if (*trainc) {
      if (handcrafted.empty()) handcrafted = cfg.paths.handcrafted;
      const auto abl = parse_ablation(ablate);
      if (!all_targets && seeds_flag.empty()) {
        if (!trainc->count("--target")) throw ConfigError("train needs --target (or --all-targets)");
        return cmd_train_one(root, target, seed, cfg, abl, handcrafted, force, epochs);
      }
      std::vector<int> ts = all_targets ? prepared_targets(root) : std::vector<int>{target};
      if (ts.empty()) throw DataError("no prepared targets under " + root.string());
      const auto seeds = seeds_flag.empty() ? cfg.train.seeds : parse_seeds(seeds_flag);
      std::vector<std::vector<std::string>> tasks;
      for (int t : ts) {
        for (auto s : seeds) {
          std::vector<std::string> a = {"--root", root.string(), "train", "--target", std::to_string(t), "--seed",
                                        std::to_string(s)};
          if (quiet) a.insert(a.begin(), "-q");
          if (verbose) a.insert(a.begin(), "-v");
          if (!config_path.empty()) a.insert(a.end(), {"--config", config_path});
          if (!ablate.empty()) a.insert(a.end(), {"--ablate", ablate});
          if (!handcrafted.empty()) a.insert(a.end(), {"--handcrafted", handcrafted});
          if (epochs) a.insert(a.end(), {"--epochs", std::to_string(*epochs)});
          if (force) a.push_back("--force");
          tasks.push_back(std::move(a));
        }
      }
      // feature caches are shared by every variant; build them before fanning out
      for (int t : ts) {
        for (auto s : seeds) ensure_features(root, t, s, cfg, handcrafted, false, false, true);
      }
      std::cout << "running " << tasks.size() << " training runs with " << jobs << " worker(s)\n";
      return run_pool(tasks, jobs);
    }
    if (*evaluate) {
      if (!checkpoint.empty()) return cmd_evaluate_checkpoint(checkpoint);
      if (!aggregate_dir.empty()) return cmd_aggregate(aggregate_dir, out_dir.empty() ? aggregate_dir : out_dir, "");
      throw ConfigError("evaluate needs --checkpoint or --aggregate");
    }
    if (*analyze) {
      if ((what == "trait-relations" || what == "topic-agreement") && (data.empty() || prompts.empty())) {
        throw ConfigError("analyze --what " + what + " needs --data and --prompts");
      }
      return cmd_analyze(what, root, data, prompts, out_dir, target, seed, trait, split, passes);
    }
    if (*ablation) {
      auto ts = targets.empty() ? prepared_targets(root) : targets;
      if (ts.empty()) throw DataError("no prepared targets under " + root.string());
      const auto seeds = seeds_flag.empty() ? cfg.train.seeds : parse_seeds(seeds_flag);
      const std::vector<std::string> variants = {"no-prompt-attention,no-tc,no-ts", "no-tc,no-ts", "no-ts", ""};
      for (int t : ts) {
        for (auto s : seeds) ensure_features(root, t, s, cfg, cfg.paths.handcrafted, false, false, true);
      }
      std::vector<std::vector<std::string>> tasks;
      for (const auto& v : variants) {
        for (int t : ts) {
          for (auto s : seeds) {
            std::vector<std::string> a = {"--root", root.string(), "train", "--target", std::to_string(t),
                                          "--seed", std::to_string(s)};
            if (quiet) a.insert(a.begin(), "-q");
            if (!config_path.empty()) a.insert(a.end(), {"--config", config_path});
            if (!v.empty()) a.insert(a.end(), {"--ablate", v});
            if (epochs) a.insert(a.end(), {"--epochs", std::to_string(*epochs)});
            tasks.push_back(std::move(a));
          }
        }
      }
      std::cout << "running " << tasks.size() << " training runs with " << jobs << " worker(s)\n";
      if (int rc = run_pool(tasks, jobs); rc != 0) return rc;
      return cmd_aggregate(root, out_dir.empty() ? root / "ablation" : fs::path(out_dir), "ablation_");
    }
    if (*synthc) {
      synth::Options so;
      so.essays_per_prompt = per_prompt;
      so.num_prompts = n_prompts;
      so.seed = seed;
      const auto corpus = synth::generate(so);
      fs::create_directories(out_dir);
      synth::write_dataset(corpus, fs::path(out_dir) / "dataset.tsv");
      synth::write_prompts(corpus, fs::path(out_dir) / "prompts.json");
      std::cout << "wrote " << corpus.records.size() << " essays over " << n_prompts << " prompts to " << out_dir
                << '\n';
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
