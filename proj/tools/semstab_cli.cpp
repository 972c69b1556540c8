// semstab command-line front end. Every subcommand reads a JSON config,
// writes its artifacts under the output directory and prints one JSON line.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "semstab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace semstab;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  bool deterministic = false;
  std::string output_dir;
};

struct Extra {
  std::string method = "cumulative";
  int p = 100;
  std::string period;
  std::vector<std::string> keywords;
};

RunConfig load(const Globals& g) {
  RunConfig c = g.config.empty() ? run_config_from_json(json::object()) : load_run_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.workers) c.workers = *g.workers;
  if (g.deterministic) c.deterministic = true;
  if (!g.output_dir.empty()) c.output_dir = g.output_dir;
  if (c.deterministic) c.workers = 1;
  c.params.embed.workers = c.workers;
  c.params.stability.workers = c.workers;
  c.params.cv.workers = c.workers;
  c.plan.params = c.params;
  c.plan.seed = c.seed;
  c.plan.workers = c.workers;
  return c;
}

std::string path_or(const RunConfig& c, const std::string& key, const fs::path& fallback) {
  auto it = c.paths.find(key);
  return it != c.paths.end() ? it->second : fallback.string();
}

std::string need_path(const RunConfig& c, const std::string& key) {
  auto it = c.paths.find(key);
  require(it != c.paths.end(), "cli", "config needs paths." + key);
  return it->second;
}

const Period& need_period(const RunConfig& c, std::size_t i) {
  require(c.periods.size() > i, "cli", "config needs at least " + std::to_string(i + 1) + " corpus.periods");
  return c.periods[i];
}

const Period& period_named(const RunConfig& c, const std::string& name, std::size_t fallback) {
  if (name.empty()) return need_period(c, fallback);
  for (const auto& p : c.periods)
    if (p.name == name) return p;
  fail("cli", "no period named '" + name + "' in corpus.periods");
}

PostStore load_posts(const RunConfig& c, const std::string& key = "posts") {
  return ingest_posts(need_path(c, key), c.schema);
}

fs::path phrases_file(const RunConfig& c, const Period& p) { return fs::path(c.output_dir) / ("phrases_" + p.name + ".txt"); }

// Users with a label; deployment users mixed into the same file are dropped.
PostStore load_labeled(const RunConfig& c) {
  auto posts = load_posts(c).subset_users([](const UserTimeline& u) { return u.label.has_value(); });
  require(posts.user_count() > 0, "cli", "no labeled users in '" + need_path(c, "posts") + "'");
  return posts;
}

// The period's phrase model from a previous `phrases` run, or learned now.
PhraseModel phrases_for(const RunConfig& c, const TokenizedStore& store, const Period& p) {
  const auto f = phrases_file(c, p);
  if (fs::exists(f)) return load_phrases(f);
  return learn_phrases(slice_corpus(store, {p}).slices[0].sequences(), c.params.phrases);
}

PeriodSlice phrased_slice(const RunConfig& c, const TokenizedStore& store, const Period& p) {
  return slice_corpus(store, {p}, {phrases_for(c, store, p)}).slices[0];
}

std::shared_ptr<const Vocabulary> cumulative_vocab(const TermCounts& counts, std::uint64_t min_freq) {
  const auto terms = select_cumulative(counts, min_freq);
  require(!terms.empty(), "cli", "no term exceeds the selection frequency floor");
  std::vector<std::uint64_t> f;
  for (const auto& t : terms) f.push_back(counts.at(t));
  return std::make_shared<const Vocabulary>(terms, f);
}

// ---- stages ----------------------------------------------------------------------

json stage_ingest(const RunConfig& c) {
  IngestReport rep;
  const auto store = ingest_posts(need_path(c, "posts"), c.schema, &rep);
  FilterSet fs_;
  fs_.blocked_terms = c.blocked_terms;
  fs_.blocked_communities = c.blocked_communities;
  FilterReport fr;
  const auto kept = filter_posts(store, fs_, &fr);
  const fs::path out = fs::path(c.output_dir) / "posts.clean.jsonl";
  write_posts(out, kept, c.schema);
  json j{{"lines", rep.lines}, {"accepted", rep.accepted}, {"skipped", rep.skipped}, {"kept", fr.kept},
         {"removed", fr.removed}, {"users", kept.user_count()}, {"warnings", rep.warnings}};
  auto o = open_output(fs::path(c.output_dir) / "ingest_report.json");
  o << j.dump(2) << '\n';
  j.erase("warnings");
  j["output"] = out.string();
  return j;
}

json stage_phrases(const RunConfig& c) {
  const auto store = tokenize_store(load_posts(c), c.workers);
  std::vector<Period> periods = c.periods;
  if (periods.empty()) periods.push_back({"all", std::numeric_limits<EpochSeconds>::min() / 2, std::numeric_limits<EpochSeconds>::max() / 2});
  json merges = json::object();
  for (const auto& p : periods) {
    const auto model = learn_phrases(slice_corpus(store, {p}).slices[0].sequences(), c.params.phrases);
    save_phrases(phrases_file(c, p), model);
    merges[p.name] = model.size();
  }
  return {{"merges", merges}};
}

json stage_embed(const RunConfig& c) {
  const auto store = tokenize_store(load_posts(c), c.workers);
  require(!c.periods.empty(), "cli", "embed needs corpus.periods");
  json out = json::object();
  for (std::size_t i = 0; i < c.periods.size(); ++i) {
    const auto& p = c.periods[i];
    const auto slice = phrased_slice(c, store, p);
    auto vocab = std::make_shared<const Vocabulary>(
        build_vocabulary(slice.term_counts, c.params.vocab_min_count, c.params.vocab_max_size));
    EmbedConfig cfg = c.params.embed;
    cfg.seed = derive_seed(c.seed, {fnv1a64("embed"), fnv1a64(p.name)});
    const auto space = train_cbow(vocab, slice.sequences(), cfg);
    const fs::path f = fs::path(c.output_dir) / ("embedding_" + p.name + ".bin");
    save_embedding(f, space);
    save_vocabulary_csv(fs::path(c.output_dir) / ("vocab_" + p.name + ".csv"), *vocab);
    out[p.name] = {{"vocab", vocab->size()}, {"final_loss", space.epoch_losses().empty() ? 0.0 : space.epoch_losses().back()},
                   {"file", f.string()}};
  }
  return {{"periods", out}};
}

json stage_shift(const RunConfig& c) {
  const fs::path dir(c.output_dir);
  std::string pp, qp;
  if (c.paths.count("embedding_p")) pp = c.paths.at("embedding_p");
  else pp = (dir / ("embedding_" + need_period(c, 0).name + ".bin")).string();
  if (c.paths.count("embedding_q")) qp = c.paths.at("embedding_q");
  else qp = (dir / ("embedding_" + need_period(c, 1).name + ".bin")).string();
  const auto P = load_embedding(pp), Q = load_embedding(qp);
  const std::string np = c.periods.size() > 0 ? c.periods[0].name : "P", nq = c.periods.size() > 1 ? c.periods[1].name : "Q";
  const auto table = stability_table(P, Q, c.params.stability, np, nq);
  save_stability_csv(dir / "stability.csv", table);
  std::vector<NeighborDiff> diffs;
  for (std::size_t i = 0; i < std::min<std::size_t>(20, table.records.size()); ++i)
    diffs.push_back(neighbor_diff(P, Q, table.records[i].term, 15, c.params.stability.cf_nb, c.params.stability.cf_shift));
  save_neighbor_diffs(dir / "neighbor_diffs.json", diffs);
  double mean = 0;
  std::size_t flagged = 0;
  for (const auto& r : table.records) {
    mean += r.S;
    flagged += r.flagged;
  }
  mean /= static_cast<double>(table.records.size());
  json j{{"terms", table.records.size()}, {"mean_S", mean}, {"flagged", flagged},
         {"output", (dir / "stability.csv").string()}};
  // Synthetic runs: score the table against the generator's shift set.
  if (c.paths.count("manifest")) {
    const auto m = manifest_from_json(json::parse(read_file(c.paths.at("manifest"))));
    const auto rep = evaluate_detector(m, table, false);
    json d{{"auc", rep.auc}, {"shifted_scored", rep.shifted}, {"stable_scored", rep.stable},
           {"missing", rep.missing.size()}};
    auto o = open_output(dir / "detector_metrics.json");
    o << d.dump(2) << '\n';
    j["detector_auc"] = rep.auc;
  }
  return j;
}

struct SourceTarget {
  TokenizedStore store;
  PeriodSlice source, target;
  std::shared_ptr<const Vocabulary> vocab;
  DocumentTermMatrix source_dtm;
};

SourceTarget source_target(const RunConfig& c) {
  SourceTarget st;
  st.store = tokenize_store(load_labeled(c), c.workers);
  st.source = phrased_slice(c, st.store, need_period(c, 0));
  st.target = phrased_slice(c, st.store, need_period(c, 1));
  st.vocab = cumulative_vocab(st.source.term_counts, c.params.select_min_freq);
  st.source_dtm = aggregate_slice(st.source, st.vocab, c.min_posts);
  return st;
}

FitOptions fit_options(const RunConfig& c) {
  FitOptions fo;
  fo.cv = c.params.cv;
  fo.cv.seed = derive_seed(c.seed, "cv");
  return fo;
}

json stage_select(const RunConfig& c) {
  const fs::path dir(c.output_dir);
  auto st = source_target(c);
  const std::string stab_path = path_or(c, "stability", dir / "stability.csv");
  std::optional<StabilityTable> table;
  if (fs::exists(stab_path)) table = load_stability_csv(stab_path);
  std::optional<ClassifierModel> model;
  Selector probe({&st.source.term_counts, &st.target.term_counts, &st.source_dtm, nullptr, nullptr, c.seed,
                  c.params.select_min_freq});
  const bool want_model = std::any_of(c.params.methods.begin(), c.params.methods.end(),
                                      [](Method m) { return m == Method::Coefficient || m == Method::Weighted; });
  if (want_model) {
    if (c.paths.count("model")) model = load_model(c.paths.at("model"));
    else model = fit_classifier(st.source_dtm, *probe.base(), fit_options(c), "intersection", 100);
  }
  Selector sel({&st.source.term_counts, &st.target.term_counts, &st.source_dtm, model ? &*model : nullptr,
                table ? &*table : nullptr, c.seed, c.params.select_min_freq});
  std::vector<SelectedVocabulary> out;
  json sizes = json::object();
  for (auto m : c.params.methods) {
    if (!is_score_based(m)) {
      out.push_back(sel.select(m, 100));
      sizes[to_string(m)] = out.back().terms.size();
      continue;
    }
    save_scores_csv(dir / ("scores_" + to_string(m) + ".csv"), sel.scores(m));
    for (int p : c.params.percentiles) out.push_back(sel.select(m, p));
    sizes[to_string(m)] = out.back().terms.size();
  }
  save_selection_json(dir / "selections.json", out);
  return {{"base_size", sel.base()->size()}, {"cumulative_size", sel.cumulative().size()}, {"largest", sizes},
          {"output", (dir / "selections.json").string()}};
}

json stage_train(const RunConfig& c, const Extra& x) {
  const fs::path dir(c.output_dir);
  auto st = source_target(c);
  const auto sels = load_selection_json(path_or(c, "selection", dir / "selections.json"));
  const SelectedVocabulary* chosen = nullptr;
  for (const auto& s : sels)
    if (to_string(s.method) == x.method && s.p == x.p) chosen = &s;
  require(chosen != nullptr, "cli", "selection file has no entry for " + x.method + " p=" + std::to_string(x.p));
  const auto model = fit_classifier(st.source_dtm, chosen->terms, fit_options(c), x.method, x.p);
  const fs::path f = dir / ("model_" + x.method + "_" + std::to_string(x.p) + ".bin");
  save_model(f, model);
  return {{"C", model.C}, {"vocab", model.size()}, {"metadata", model.metadata}, {"output", f.string()}};
}

json stage_evaluate(const RunConfig& c, const Extra& x) {
  const auto model = load_model(need_path(c, "model"));
  const auto store = tokenize_store(load_labeled(c), c.workers);
  const auto& period = period_named(c, x.period, c.periods.size() > 1 ? 1 : 0);
  const auto slice = phrased_slice(c, store, period);
  const auto dtm = aggregate_slice(slice, model.vocab, c.min_posts);
  require(dtm.rows() > 0, "cli", "no user meets min_posts in period '" + period.name + "'");
  const auto s = evaluate_f1(model, dtm);
  json j{{"period", period.name}, {"users", dtm.rows()}, {"f1", s.f1}, {"precision", s.precision}, {"recall", s.recall},
         {"f1_undefined", s.undefined}};
  auto o = open_output(fs::path(c.output_dir) / ("evaluation_" + period.name + ".json"));
  o << j.dump(2) << '\n';
  return j;
}

json stage_prevalence(const RunConfig& c, const Extra& x) {
  const auto model = load_model(need_path(c, "model"));
  const auto posts = c.paths.count("unlabeled_posts") ? load_posts(c, "unlabeled_posts") : load_posts(c);
  const auto store = tokenize_store(posts, c.workers);
  const auto& pre = c.plan.pre.start < c.plan.pre.end ? c.plan.pre : need_period(c, 0);
  const auto& during = c.plan.during.start < c.plan.during.end ? c.plan.during : need_period(c, 1);
  std::vector<PrevalenceRow> rows;
  for (const auto* p : {&pre, &during}) {
    const auto dtm = aggregate_slice(phrased_slice(c, store, *p), model.vocab, c.min_posts);
    rows.push_back({model.method, model.p, estimate_prevalence(model, dtm, c.min_posts, p->name)});
  }
  const auto change = prevalence_change(rows[0].estimate, rows[1].estimate);
  const fs::path dir(c.output_dir);
  save_prevalence_csv(dir / "prevalence.csv", rows);
  json j{{"pre", to_json(rows[0].estimate)}, {"during", to_json(rows[1].estimate)}, {"change", to_json(change)}};
  if (!x.keywords.empty()) {
    save_keyword_series_csv(dir / "keyword_series.csv", keyword_series(store, x.keywords));
    j["keyword_series"] = (dir / "keyword_series.csv").string();
  }
  return j;
}

json stage_generalization(const RunConfig& c) {
  const auto res = run_generalization(load_posts(c), c.plan);
  write_generalization(c.output_dir, res);
  json best = json::array();
  for (const auto& b : res.table)
    best.push_back({{"method", b.method}, {"test", b.test_window}, {"best_p", b.best_p}, {"mean_f1", b.mean},
                    {"significant", b.significant}});
  return {{"records", res.records.size()}, {"leakage_free", res.leakage_free}, {"best", best}};
}

json stage_practical(const RunConfig& c) {
  const auto res = run_practical(load_posts(c), load_posts(c, "unlabeled_posts"), c.plan);
  write_practical(c.output_dir, res);
  return {{"records", res.records.size()}, {"divergence", to_json(res.divergence)}};
}

json stage_synth(const RunConfig& c) {
  SynthSpec spec = c.synth;
  spec.seed = derive_seed(c.seed, {spec.seed});
  const auto corpus = generate(spec);
  write_synth(c.output_dir, corpus);
  return {{"posts", corpus.posts.post_count()},
          {"users", corpus.posts.user_count()},
          {"shifted", corpus.manifest.shifted.size()},
          {"signal", corpus.manifest.signal.size()},
          {"corpus", (fs::path(c.output_dir) / "posts.jsonl").string()},
          {"manifest", (fs::path(c.output_dir) / "manifest.json").string()}};
}

json stage_self_test(const RunConfig& c, bool& ok) {
  json checks = json::array();
  ok = true;
  for (const auto& d : defaults_audit(c)) {
    checks.push_back({{"name", d.name}, {"configured", d.configured}, {"expected", d.expected}, {"ok", d.ok()},
                      {"citation", d.citation}});
    ok = ok && d.ok();
  }
  const auto round = run_config_from_json(to_json(c));
  const bool round_trip = to_json(round) == to_json(c);
  ok = ok && round_trip;
  return {{"checks", checks}, {"config_round_trip", round_trip}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semstab: semantic stability, vocabulary selection and prevalence monitoring"};
  app.require_subcommand(1);
  Globals g;
  Extra x;
  app.add_option("--config", g.config, "JSON run configuration");
  app.add_option("--seed", g.seed, "Root seed (overrides the config)");
  app.add_option("--workers", g.workers, "Worker threads");
  app.add_flag("--deterministic", g.deterministic, "Single-worker numeric paths");
  app.add_option("--output-dir", g.output_dir, "Directory for artifacts");

  const std::vector<std::pair<std::string, std::string>> stages = {
      {"ingest", "Read, validate and filter a post archive"},
      {"phrases", "Learn per-period phrase models"},
      {"embed", "Train one CBOW embedding per period"},
      {"shift", "Score semantic stability between two embeddings"},
      {"select", "Score and select vocabularies with every method"},
      {"train", "Fit a classifier on one selected vocabulary"},
      {"evaluate", "F1 of a saved model on a period"},
      {"prevalence", "Prevalence before and during, plus keyword series"},
      {"generalization", "Temporal generalization experiment"},
      {"practical", "Practical-effects (prevalence sensitivity) experiment"},
      {"synth", "Generate a synthetic two-period corpus"},
      {"self-test", "Audit defaults and config round-trip"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, desc] : stages) subs[name] = app.add_subcommand(name, desc);
  for (const char* s : {"train"}) {
    subs[s]->add_option("--method", x.method, "Selection method");
    subs[s]->add_option("--p", x.p, "Vocabulary percentile");
  }
  subs["evaluate"]->add_option("--period", x.period, "Period name (default: second period)");
  subs["prevalence"]->add_option("--keywords", x.keywords, "Terms for keyword series")->delimiter(',');

  CLI11_PARSE(app, argc, argv);
  std::string stage;
  for (const auto& [name, sub] : subs)
    if (sub->parsed()) stage = name;

  json summary{{"stage", stage}};
  try {
    const RunConfig c = load(g);
    bool ok = true;
    json r;
    if (stage == "ingest") r = stage_ingest(c);
    else if (stage == "phrases") r = stage_phrases(c);
    else if (stage == "embed") r = stage_embed(c);
    else if (stage == "shift") r = stage_shift(c);
    else if (stage == "select") r = stage_select(c);
    else if (stage == "train") r = stage_train(c, x);
    else if (stage == "evaluate") r = stage_evaluate(c, x);
    else if (stage == "prevalence") r = stage_prevalence(c, x);
    else if (stage == "generalization") r = stage_generalization(c);
    else if (stage == "practical") r = stage_practical(c);
    else if (stage == "synth") r = stage_synth(c);
    else if (stage == "self-test") r = stage_self_test(c, ok);
    summary["status"] = ok ? "ok" : "failed";
    summary["result"] = r;
    std::cout << summary.dump() << std::endl;
    return ok ? 0 : 1;
  } catch (const std::exception& e) {
    summary["status"] = "error";
    summary["error"] = e.what();
    std::cout << summary.dump() << std::endl;
    return 2;
  }
}
