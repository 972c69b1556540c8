#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semstab/corpus.hpp"
#include "semstab/embed.hpp"
#include "semstab/error.hpp"
#include "semstab/harness.hpp"
#include "semstab/io.hpp"
#include "semstab/synthlab.hpp"

namespace semstab {

// Every tunable of the toolkit in one place. Stages read the sections they
// need; `paths` names their inputs and outputs.
struct RunConfig {
  std::string stage;  // optional default subcommand
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool deterministic = false;
  std::string output_dir = "out";
  std::map<std::string, std::string> paths;

  PostSchema schema;
  std::vector<Period> periods;  // named periods for slicing
  std::set<std::string> blocked_terms;
  std::set<std::string> blocked_communities;
  std::size_t min_posts = 200;

  PipelineParams params;  // phrases, vocabulary, embed, shift, select, model
  ExperimentPlan plan;    // harness settings (its `params` mirror the above)
  SynthSpec synth;
};

inline const std::set<std::string>& known_path_keys() {
  static const std::set<std::string> keys = {"posts",     "unlabeled_posts", "phrases",   "phrases_p", "phrases_q",
                                             "vocabulary", "dtm",            "embedding", "embedding_p",
                                             "embedding_q", "stability",     "selection", "scores",    "model",
                                             "manifest",  "train_dtm",       "test_dtm",  "pre_dtm",   "during_dtm"};
  return keys;
}

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed, const std::string& section) {
  require(j.is_object(), "cli", "config section '" + section + "' must be an object");
  for (const auto& [k, v] : j.items())
    require(allowed.count(k) > 0, "cli", "unknown config key '" + (section.empty() ? k : section + "." + k) + "'");
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    fail("cli", std::string("config key '") + key + "' has the wrong type: " + e.what());
  }
}

inline nlohmann::json period_json(const Period& p) {
  return {{"name", p.name}, {"start", format_utc(p.start)}, {"end", format_utc(p.end)}};
}

inline Period period_from(const nlohmann::json& j) {
  check_keys(j, {"name", "start", "end"}, "period");
  Period p;
  p.name = j.at("name").get<std::string>();
  const auto s = parse_utc(j.at("start").get<std::string>());
  const auto e = parse_utc(j.at("end").get<std::string>());
  require(s && e, "cli", "period '" + p.name + "' has an unparseable start or end");
  p.start = *s;
  p.end = *e;
  return p;
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  const auto& pp = c.params;
  nlohmann::json j;
  j["stage"] = c.stage;
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["deterministic"] = c.deterministic;
  j["output_dir"] = c.output_dir;
  j["paths"] = c.paths;
  nlohmann::json periods = nlohmann::json::array();
  for (const auto& p : c.periods) periods.push_back(detail::period_json(p));
  j["corpus"] = {{"schema",
                  {{"user", c.schema.user},
                   {"timestamp", c.schema.timestamp},
                   {"text", c.schema.text},
                   {"label", c.schema.label},
                   {"community", c.schema.community}}},
                 {"periods", periods},
                 {"blocked_terms", c.blocked_terms},
                 {"blocked_communities", c.blocked_communities},
                 {"min_posts", c.min_posts}};
  j["phrases"] = {{"min_count", pp.phrases.min_count}, {"threshold", pp.phrases.threshold}, {"passes", pp.phrases.passes}};
  j["vocabulary"] = {{"min_count", pp.vocab_min_count}, {"max_size", pp.vocab_max_size}};
  j["embed"] = to_json(pp.embed);
  j["shift"] = {{"k", pp.stability.k}, {"cf_nb", pp.stability.cf_nb}, {"cf_shift", pp.stability.cf_shift}};
  std::vector<std::string> methods;
  for (auto m : pp.methods) methods.push_back(to_string(m));
  j["select"] = {{"min_freq", pp.select_min_freq}, {"methods", methods}, {"percentiles", pp.percentiles}};
  j["model"] = {{"c_grid", pp.cv.grid},
                {"folds", pp.cv.folds},
                {"lbfgs_memory", pp.cv.lbfgs.memory},
                {"max_iterations", pp.cv.lbfgs.max_iterations},
                {"gradient_tolerance", pp.cv.lbfgs.gradient_tolerance}};
  const auto& p = c.plan;
  nlohmann::json splits = nlohmann::json::array();
  for (const auto& s : p.splits) {
    nlohmann::json tests = nlohmann::json::array();
    for (const auto& t : s.tests) tests.push_back(detail::period_json(t));
    splits.push_back({{"train", detail::period_json(s.train)}, {"tests", tests}});
  }
  j["harness"] = {{"dataset", p.dataset},
                  {"splits", splits},
                  {"outer_repeats", p.outer_repeats},
                  {"inner_repeats", p.inner_repeats},
                  {"test_fraction", p.test_fraction},
                  {"subsample", p.subsample},
                  {"train_per_class", p.train_per_class},
                  {"test_per_class", p.test_per_class},
                  {"bootstrap_samples", p.bootstrap_samples},
                  {"labeled_span", detail::period_json(p.labeled_span)},
                  {"pre", detail::period_json(p.pre)},
                  {"during", detail::period_json(p.during)},
                  {"unlabeled_sample", p.unlabeled_sample},
                  {"divergence_f1_tolerance", p.divergence_f1_tolerance},
                  {"divergence_floor", p.divergence_floor},
                  {"shift_report_terms", p.shift_report_terms}};
  j["synth"] = to_json(c.synth);
  return j;
}

namespace detail {

inline RunConfig parse_run_config(const nlohmann::json& j) {
  check_keys(j, {"stage", "seed", "workers", "deterministic", "output_dir", "paths", "corpus", "phrases", "vocabulary",
                 "embed", "shift", "select", "model", "harness", "synth"},
             "");
  RunConfig c;
  read(j, "stage", c.stage);
  read(j, "seed", c.seed);
  read(j, "workers", c.workers);
  read(j, "deterministic", c.deterministic);
  read(j, "output_dir", c.output_dir);
  if (j.contains("paths")) {
    check_keys(j["paths"], known_path_keys(), "paths");
    c.paths = j["paths"].get<std::map<std::string, std::string>>();
  }
  if (j.contains("corpus")) {
    const auto& s = j["corpus"];
    check_keys(s, {"schema", "periods", "blocked_terms", "blocked_communities", "min_posts"}, "corpus");
    if (s.contains("schema")) {
      const auto& sc = s["schema"];
      check_keys(sc, {"user", "timestamp", "text", "label", "community"}, "corpus.schema");
      read(sc, "user", c.schema.user);
      read(sc, "timestamp", c.schema.timestamp);
      read(sc, "text", c.schema.text);
      read(sc, "label", c.schema.label);
      read(sc, "community", c.schema.community);
    }
    if (s.contains("periods"))
      for (const auto& p : s["periods"]) c.periods.push_back(detail::period_from(p));
    read(s, "blocked_terms", c.blocked_terms);
    read(s, "blocked_communities", c.blocked_communities);
    read(s, "min_posts", c.min_posts);
  }
  auto& pp = c.params;
  if (j.contains("phrases")) {
    const auto& s = j["phrases"];
    check_keys(s, {"min_count", "threshold", "passes"}, "phrases");
    read(s, "min_count", pp.phrases.min_count);
    read(s, "threshold", pp.phrases.threshold);
    read(s, "passes", pp.phrases.passes);
  }
  if (j.contains("vocabulary")) {
    const auto& s = j["vocabulary"];
    check_keys(s, {"min_count", "max_size"}, "vocabulary");
    read(s, "min_count", pp.vocab_min_count);
    read(s, "max_size", pp.vocab_max_size);
  }
  if (j.contains("embed")) {
    check_keys(j["embed"], {"dim", "epochs", "window", "negatives", "alpha_start", "alpha_end", "subsample",
                            "ns_exponent", "seed", "workers"},
               "embed");
    pp.embed = embed_config_from_json(j["embed"]);
  }
  if (j.contains("shift")) {
    const auto& s = j["shift"];
    check_keys(s, {"k", "cf_nb", "cf_shift"}, "shift");
    read(s, "k", pp.stability.k);
    read(s, "cf_nb", pp.stability.cf_nb);
    read(s, "cf_shift", pp.stability.cf_shift);
  }
  if (j.contains("select")) {
    const auto& s = j["select"];
    check_keys(s, {"min_freq", "methods", "percentiles"}, "select");
    read(s, "min_freq", pp.select_min_freq);
    if (s.contains("methods")) {
      pp.methods.clear();
      for (const auto& m : s["methods"]) pp.methods.push_back(method_from_string(m.get<std::string>()));
    }
    read(s, "percentiles", pp.percentiles);
    for (int p : pp.percentiles) require(p >= 1 && p <= 100, "cli", "percentiles must lie in 1..100");
  }
  if (j.contains("model")) {
    const auto& s = j["model"];
    check_keys(s, {"c_grid", "folds", "lbfgs_memory", "max_iterations", "gradient_tolerance"}, "model");
    read(s, "c_grid", pp.cv.grid);
    read(s, "folds", pp.cv.folds);
    read(s, "lbfgs_memory", pp.cv.lbfgs.memory);
    read(s, "max_iterations", pp.cv.lbfgs.max_iterations);
    read(s, "gradient_tolerance", pp.cv.lbfgs.gradient_tolerance);
    for (double C : pp.cv.grid) require(C > 0.0, "cli", "C grid values must be positive");
  }
  if (j.contains("harness")) {
    const auto& s = j["harness"];
    check_keys(s, {"dataset", "splits", "outer_repeats", "inner_repeats", "test_fraction", "subsample",
                   "train_per_class", "test_per_class", "bootstrap_samples", "labeled_span", "pre", "during",
                   "unlabeled_sample", "divergence_f1_tolerance", "divergence_floor", "shift_report_terms"},
               "harness");
    auto& p = c.plan;
    read(s, "dataset", p.dataset);
    if (s.contains("splits"))
      for (const auto& sp : s["splits"]) {
        check_keys(sp, {"train", "tests"}, "harness.splits");
        TrainTestSplit t{detail::period_from(sp.at("train")), {}};
        for (const auto& w : sp.at("tests")) t.tests.push_back(detail::period_from(w));
        p.splits.push_back(std::move(t));
      }
    read(s, "outer_repeats", p.outer_repeats);
    read(s, "inner_repeats", p.inner_repeats);
    read(s, "test_fraction", p.test_fraction);
    read(s, "subsample", p.subsample);
    read(s, "train_per_class", p.train_per_class);
    read(s, "test_per_class", p.test_per_class);
    read(s, "bootstrap_samples", p.bootstrap_samples);
    if (s.contains("labeled_span")) p.labeled_span = detail::period_from(s["labeled_span"]);
    if (s.contains("pre")) p.pre = detail::period_from(s["pre"]);
    if (s.contains("during")) p.during = detail::period_from(s["during"]);
    read(s, "unlabeled_sample", p.unlabeled_sample);
    read(s, "divergence_f1_tolerance", p.divergence_f1_tolerance);
    read(s, "divergence_floor", p.divergence_floor);
    read(s, "shift_report_terms", p.shift_report_terms);
  }
  if (j.contains("synth")) c.synth = synth_spec_from_json(j["synth"]);

  pp.embed.validate();
  require(c.workers >= 1, "cli", "workers must be >= 1");
  require(pp.stability.k > 0, "cli", "shift.k must be positive");
  require(pp.phrases.passes >= 1, "cli", "phrases.passes must be >= 1");
  require(pp.cv.folds >= 2, "cli", "model.folds must be >= 2");
  c.plan.params = pp;
  c.plan.seed = c.seed;
  c.plan.workers = c.workers;
  c.plan.min_posts = c.min_posts;
  return c;
}

}  // namespace detail

// Fail-closed: unknown keys anywhere are an error; absent keys keep defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  require(j.is_object(), "cli", "config must be a JSON object");
  try {
    return detail::parse_run_config(j);
  } catch (const nlohmann::json::exception& e) {
    fail("cli", std::string("malformed config value: ") + e.what());
  }
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  nlohmann::json j = nlohmann::json::parse(read_file(path), nullptr, false);
  require(!j.is_discarded(), "cli", "config is not valid JSON: " + path.string());
  return run_config_from_json(j);
}

// ---- defaults audit -------------------------------------------------------------------

struct DefaultCheck {
  std::string name;
  double configured = 0.0;
  double expected = 0.0;
  std::string citation;
  bool ok() const { return configured == expected; }
};

// Each published default alongside the value the toolkit actually uses.
inline std::vector<DefaultCheck> defaults_audit(const RunConfig& c = {}) {
  const auto& pp = c.params;
  auto d = [](auto v) { return static_cast<double>(v); };
  return {
      {"shift.k", d(pp.stability.k), 500, "neighbourhood size k = 500"},
      {"shift.cf_nb", d(pp.stability.cf_nb), 50, "cf_nb = 50"},
      {"shift.cf_shift", d(pp.stability.cf_shift), 50, "cf_shift = 50"},
      {"embed.dim", d(pp.embed.dim), 100, "100-dimensional CBOW embeddings"},
      {"embed.epochs", d(pp.embed.epochs), 20, "20 training iterations"},
      {"embed.window", d(pp.embed.window), 5, "default word2vec window"},
      {"embed.negatives", d(pp.embed.negatives), 5, "default negative sampling size"},
      {"phrases.threshold", d(pp.phrases.threshold), 10, "phrase PMI threshold 10"},
      {"phrases.min_count", d(pp.phrases.min_count), 5, "phrase minimum frequency 5"},
      {"vocabulary.min_count", d(pp.vocab_min_count), 5, "minimum frequency 5"},
      {"vocabulary.max_size", d(pp.vocab_max_size), 500000, "at most 500k n-grams"},
      {"phrases.max_ngram", d(pp.phrases.passes + 1), 3, "unigrams, bigrams and trigrams"},
      {"model.folds", d(pp.cv.folds), 10, "10-fold cross validation"},
      {"model.lbfgs_memory", d(pp.cv.lbfgs.memory), 10, "L-BFGS memory 10"},
      {"select.min_freq", d(pp.select_min_freq), 50, "frequency > 50 gate"},
      {"harness.test_fraction", c.plan.test_fraction, 0.2, "80/20 train/test split"},
      {"harness.unlabeled_sample", c.plan.unlabeled_sample, 0.2, "20% post sample for unlabeled embeddings"},
      {"harness.paper_outer_repeats", d(ExperimentPlan::paper_scale().outer_repeats), 100, "stage 1 repeated 100 times"},
      {"harness.paper_inner_repeats", d(ExperimentPlan::paper_scale().inner_repeats), 10, "stage 2 repeated 10 times"},
      {"corpus.min_posts", d(c.min_posts), 200, "200 posts per period (Twitter profile)"},
  };
}

}  // namespace semstab
