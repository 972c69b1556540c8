#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semstab/corpus.hpp"
#include "semstab/embed.hpp"
#include "semstab/error.hpp"
#include "semstab/io.hpp"
#include "semstab/model.hpp"
#include "semstab/monitor.hpp"
#include "semstab/parallel.hpp"
#include "semstab/phrases.hpp"
#include "semstab/rng.hpp"
#include "semstab/select.hpp"
#include "semstab/shift.hpp"
#include "semstab/vocab.hpp"

namespace semstab {

// Parameters shared by both protocols.
struct PipelineParams {
  PhraseParams phrases;
  EmbedConfig embed;
  std::uint64_t vocab_min_count = 5;
  std::size_t vocab_max_size = 500000;
  StabilityParams stability;
  std::uint64_t select_min_freq = 50;
  std::vector<Method> methods = all_methods();
  std::vector<int> percentiles = default_percentiles();
  CvOptions cv;
};

struct TrainTestSplit {
  Period train;               // historical accumulation window
  std::vector<Period> tests;  // future windows, each strictly after `train`
};

struct ExperimentPlan {
  std::string dataset = "synthetic";
  std::vector<TrainTestSplit> splits;  // generalization protocol
  std::size_t outer_repeats = 10;
  std::size_t inner_repeats = 3;
  std::size_t min_posts = 200;      // per period; 200 for Twitter-like data, 100 for Reddit-like
  double test_fraction = 0.2;       // stage-1 user hold-out
  double subsample = 0.8;           // stage-2 share of the smaller class drawn per class
  std::size_t train_per_class = 0;  // fixed stage-2 sizes; 0 derives them from `subsample`
  std::size_t test_per_class = 0;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::size_t bootstrap_samples = 2000;
  PipelineParams params;

  // Practical-effects protocol.
  Period labeled_span{"labeled", 0, 0};
  Period pre{"pre", 0, 0};
  Period during{"during", 0, 0};
  double unlabeled_sample = 0.2;  // share of unlabeled posts used for embeddings
  double divergence_f1_tolerance = 0.01;
  double divergence_floor = 0.05;  // prevalence-change gap, as a proportion
  std::size_t shift_report_terms = 20;

  static ExperimentPlan paper_scale() {
    ExperimentPlan p;
    p.outer_repeats = 100;
    p.inner_repeats = 10;
    return p;
  }

  void validate_generalization() const {
    require(outer_repeats >= 1 && inner_repeats >= 1, "harness", "repeats must be >= 1");
    require(!splits.empty(), "harness", "plan has no train/test splits");
    require(test_fraction > 0.0 && test_fraction < 1.0, "harness", "test_fraction must be in (0,1)");
    require(subsample > 0.0 && subsample <= 1.0, "harness", "subsample must be in (0,1]");
    for (const auto& s : splits) {
      require(s.train.start < s.train.end, "harness", "training window '" + s.train.name + "' is empty");
      require(!s.tests.empty(), "harness", "training window '" + s.train.name + "' has no test windows");
      for (const auto& t : s.tests) {
        require(t.start < t.end, "harness", "test window '" + t.name + "' is empty");
        require(t.start >= s.train.end, "harness",
                "test window '" + t.name + "' must start after training window '" + s.train.name + "' ends");
      }
    }
  }

  void validate_practical() const {
    require(outer_repeats >= 1 && inner_repeats >= 1, "harness", "repeats must be >= 1");
    require(labeled_span.start < labeled_span.end, "harness", "labeled span is empty");
    require(pre.start < pre.end && during.start < during.end && pre.end <= during.start, "harness",
            "pre and during periods must be non-empty and ordered");
    require(unlabeled_sample > 0.0 && unlabeled_sample <= 1.0, "harness", "unlabeled_sample must be in (0,1]");
    require(test_fraction > 0.0 && test_fraction < 1.0, "harness", "test_fraction must be in (0,1)");
    require(subsample > 0.0 && subsample <= 1.0, "harness", "subsample must be in (0,1]");
  }
};

inline std::uint64_t vocabulary_hash(std::vector<std::string> terms) {
  std::sort(terms.begin(), terms.end());
  std::uint64_t h = fnv1a64("");
  for (const auto& t : terms) {
    h = fnv1a64(t, h);
    h = fnv1a64("\n", h);
  }
  return h;
}

struct RunRecord {
  std::size_t outer = 0;
  std::size_t inner = 0;
  std::string method;
  int p = 100;
  std::string train_window;
  std::string test_window;
  double test_f1 = 0.0;
  double dev_f1 = 0.0;  // mean cross-validated F1 at the chosen C
  double C = 0.0;
  std::size_t vocab_size = 0;
  std::uint64_t vocab_hash = 0;
  std::uint64_t split_seed = 0;   // stage-1 seed
  std::uint64_t sample_seed = 0;  // stage-2 seed
};

struct Cell {
  std::string method;
  int p = 100;
  std::string train_window;
  std::string test_window;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

struct BestCell {
  std::string method;
  std::string train_window;
  std::string test_window;
  int best_p = 100;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
  double diff_vs_cumulative = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool significant = false;  // bootstrap CI of the paired difference excludes 0
};

struct GeneralizationResult {
  std::string dataset;
  std::vector<RunRecord> records;
  std::vector<Cell> cells;
  std::vector<BestCell> table;
  bool leakage_free = false;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// A period's posts phrased with that period's model, plus counts and an
// embedding built from the stage-1 training users only.
struct WindowData {
  Period period;
  PhraseModel phrases;
  PeriodSlice slice;        // every user, phrased
  TermCounts train_counts;  // training users only
  std::shared_ptr<const EmbeddingSpace> space;
};

inline TokenizedStore restrict_users(const TokenizedStore& store, const std::set<std::string>& users) {
  TokenizedStore out;
  for (const auto& u : store)
    if (users.count(u.user_id)) out.push_back(u);
  return out;
}

inline WindowData prepare_window(const TokenizedStore& all, const TokenizedStore& train, const Period& w,
                                 const PipelineParams& pp, std::uint64_t seed, bool embed) {
  WindowData wd;
  wd.period = w;
  const auto raw = slice_corpus(train, {w}).slices[0];
  require(!raw.users.empty(), "harness", "no training-user posts in window '" + w.name + "'");
  wd.phrases = learn_phrases(raw.sequences(), pp.phrases);
  wd.slice = slice_corpus(all, {w}, {wd.phrases}).slices[0];
  const auto trained = slice_corpus(train, {w}, {wd.phrases}).slices[0];
  wd.train_counts = trained.term_counts;
  if (embed) {
    auto vocab = std::make_shared<const Vocabulary>(build_vocabulary(wd.train_counts, pp.vocab_min_count, pp.vocab_max_size));
    require(!vocab->empty(), "harness", "window '" + w.name + "' has no terms above the vocabulary floor");
    EmbedConfig cfg = pp.embed;
    cfg.seed = seed;
    wd.space = std::make_shared<const EmbeddingSpace>(train_cbow(vocab, trained.sequences(), cfg));
  }
  return wd;
}

// Rows of `m` whose users are in `users`, split by label.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> rows_by_class(const DocumentTermMatrix& m) {
  std::vector<std::size_t> neg, pos;
  for (std::size_t r = 0; r < m.rows(); ++r) (m.label(r) == 1 ? pos : neg).push_back(r);
  return {neg, pos};
}

inline std::size_t per_class_size(std::size_t fixed, double subsample, std::size_t neg, std::size_t pos,
                                  const std::string& what) {
  const std::size_t avail = std::min(neg, pos);
  const std::size_t n = fixed ? fixed : static_cast<std::size_t>(std::floor(subsample * static_cast<double>(avail)));
  require(n <= avail, "harness",
          what + ": need " + std::to_string(n) + " users per class but only " + std::to_string(neg) + " negative and " +
              std::to_string(pos) + " positive users meet min_posts");
  require(n >= 2, "harness",
          what + ": class balance leaves fewer than 2 users per class (" + std::to_string(neg) + " negative, " +
              std::to_string(pos) + " positive meet min_posts)");
  return n;
}

// Balanced draw without replacement, `n` rows from each class, in row order.
inline std::vector<std::size_t> balanced_sample(const DocumentTermMatrix& m, std::size_t n, Rng& rng) {
  auto [neg, pos] = rows_by_class(m);
  rng.shuffle(neg);
  rng.shuffle(pos);
  std::vector<std::size_t> rows(neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(n));
  rows.insert(rows.end(), pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(rows.begin(), rows.end());
  return rows;
}

inline double dev_f1(const ClassifierModel& m) {
  const auto& md = m.metadata;
  if (!md.contains("grid")) return std::nan("");
  const auto grid = md["grid"].get<std::vector<double>>();
  const auto f1s = md["cv_mean_f1"].get<std::vector<double>>();
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (grid[i] == m.C) return f1s[i];
  return std::nan("");
}

// Train/test split of user ids; `test_fraction` of users (rounded) held out.
inline std::pair<std::set<std::string>, std::set<std::string>> split_users(const TokenizedStore& store, double test_fraction,
                                                                           std::uint64_t seed) {
  std::vector<std::string> ids;
  for (const auto& u : store) ids.push_back(u.user_id);
  Rng rng(seed);
  rng.shuffle(ids);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ids.size())));
  std::set<std::string> test(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::set<std::string> train(ids.begin() + static_cast<std::ptrdiff_t>(n_test), ids.end());
  return {train, test};
}

inline DocumentTermMatrix users_matrix(const PeriodSlice& slice, const std::set<std::string>& users,
                                       std::shared_ptr<const Vocabulary> vocab, std::size_t min_posts) {
  PeriodSlice sub;
  sub.period = slice.period;
  for (const auto& u : slice.users)
    if (users.count(u.user_id)) sub.users.push_back(u);
  return aggregate_slice(sub, std::move(vocab), min_posts);
}

struct TrainedSelection {
  ClassifierModel model;
  double dev = 0.0;
};

// Trains one classifier per distinct vocabulary; identical term sets share a
// model.
class ModelCache {
 public:
  const TrainedSelection& get(const DocumentTermMatrix& train, const std::vector<std::string>& terms,
                              const FitOptions& opt, const std::string& method, int p) {
    const auto h = vocabulary_hash(terms);
    auto it = cache_.find(h);
    if (it != cache_.end()) return it->second;
    TrainedSelection t{fit_classifier(train, terms, opt, method, p), 0.0};
    t.dev = dev_f1(t.model);
    return cache_.emplace(h, std::move(t)).first->second;
  }

 private:
  std::map<std::uint64_t, TrainedSelection> cache_;
};

inline std::vector<std::pair<Method, int>> method_grid(const PipelineParams& pp) {
  std::vector<std::pair<Method, int>> out;
  for (auto m : pp.methods) {
    if (!is_score_based(m)) out.emplace_back(m, 100);
    else
      for (int p : pp.percentiles) out.emplace_back(m, p);
  }
  return out;
}

inline bool needs_model(const PipelineParams& pp) {
  return std::any_of(pp.methods.begin(), pp.methods.end(),
                     [](Method m) { return m == Method::Coefficient || m == Method::Weighted; });
}

}  // namespace detail

// ---- aggregation -------------------------------------------------------------------

inline std::vector<Cell> aggregate_records(const std::vector<RunRecord>& records) {
  std::map<std::tuple<std::string, std::string, std::string, int>, std::vector<double>> groups;
  for (const auto& r : records) groups[{r.train_window, r.test_window, r.method, r.p}].push_back(r.test_f1);
  std::vector<Cell> cells;
  for (const auto& [k, v] : groups) {
    const auto& [tr, te, m, p] = k;
    cells.push_back({m, p, tr, te, detail::mean_of(v), detail::sd_of(v), v.size()});
  }
  return cells;
}

// Paired two-sided percentile bootstrap of mean(a - b) at level alpha.
struct BootstrapResult {
  double mean = 0.0;
  double low = 0.0;
  double high = 0.0;
  bool significant = false;
};

inline BootstrapResult paired_bootstrap(const std::vector<double>& a, const std::vector<double>& b, std::size_t samples,
                                        std::uint64_t seed, double alpha = 0.05) {
  require(a.size() == b.size() && !a.empty(), "harness", "bootstrap needs paired, non-empty samples");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  BootstrapResult r;
  r.mean = detail::mean_of(d);
  if (samples == 0) return r;
  Rng rng(seed);
  std::vector<double> means(samples);
  for (auto& m : means) {
    double s = 0;
    for (std::size_t i = 0; i < d.size(); ++i) s += d[rng.below(d.size())];
    m = s / static_cast<double>(d.size());
  }
  std::sort(means.begin(), means.end());
  auto q = [&](double f) {
    const auto i = static_cast<std::size_t>(std::floor(f * static_cast<double>(samples - 1)));
    return means[std::min(i, samples - 1)];
  };
  r.low = q(alpha / 2);
  r.high = q(1 - alpha / 2);
  r.significant = r.low > 0.0 || r.high < 0.0;
  return r;
}

// Best percentile per (method, windows) by mean test F1 (ties to the smaller
// p), with a paired bootstrap against Cumulative over the same repeats.
inline std::vector<BestCell> summarize(const std::vector<RunRecord>& records, std::size_t bootstrap_samples,
                                       std::uint64_t seed) {
  const auto cells = aggregate_records(records);
  std::map<std::tuple<std::string, std::string, std::string>, const Cell*> best;
  for (const auto& c : cells) {
    auto& slot = best[{c.train_window, c.test_window, c.method}];
    if (!slot || c.mean > slot->mean) slot = &c;
  }
  using Key = std::tuple<std::string, std::string, std::string, int>;
  std::map<Key, std::map<std::pair<std::size_t, std::size_t>, double>> by_unit;
  for (const auto& r : records) by_unit[{r.train_window, r.test_window, r.method, r.p}][{r.outer, r.inner}] = r.test_f1;
  std::vector<BestCell> out;
  for (const auto& [k, c] : best) {
    BestCell b{c->method, c->train_window, c->test_window, c->p, c->mean, c->sd, c->n, 0.0, 0.0, 0.0, false};
    auto ref = by_unit.find({c->train_window, c->test_window, to_string(Method::Cumulative), 100});
    if (ref != by_unit.end() && c->method != to_string(Method::Cumulative)) {
      std::vector<double> a, r;
      for (const auto& [unit, f] : by_unit.at({c->train_window, c->test_window, c->method, c->p})) {
        auto it = ref->second.find(unit);
        if (it == ref->second.end()) continue;
        a.push_back(f);
        r.push_back(it->second);
      }
      if (!a.empty()) {
        const auto bs = paired_bootstrap(a, r, bootstrap_samples,
                                         derive_seed(seed, {fnv1a64(c->method), fnv1a64(c->test_window)}));
        b.diff_vs_cumulative = bs.mean;
        b.ci_low = bs.low;
        b.ci_high = bs.high;
        b.significant = bs.significant;
      }
    }
    out.push_back(b);
  }
  return out;
}

// ---- generalization protocol ---------------------------------------------------------------

inline GeneralizationResult run_generalization(const TokenizedStore& labeled, const ExperimentPlan& plan) {
  plan.validate_generalization();
  for (const auto& u : labeled) require(u.label.has_value(), "harness", "user '" + u.user_id + "' has no label");
  const auto& pp = plan.params;
  const auto grid = detail::method_grid(pp);

  GeneralizationResult result;
  result.dataset = plan.dataset;
  bool leakage_free = true;

  for (std::size_t outer = 0; outer < plan.outer_repeats; ++outer) {
    const auto split_seed = derive_seed(plan.seed, {0x5E1ULL, outer});
    const auto [train_ids, test_ids] = detail::split_users(labeled, plan.test_fraction, split_seed);
    const auto train_store = detail::restrict_users(labeled, train_ids);

    // Windows used by any split, each embedded once.
    std::map<std::string, detail::WindowData> windows;
    std::vector<Period> needed;
    for (const auto& s : plan.splits) {
      needed.push_back(s.train);
      for (const auto& t : s.tests) needed.push_back(t);
    }
    for (const auto& w : needed) {
      if (windows.count(w.name)) continue;
      windows.emplace(w.name, detail::prepare_window(labeled, train_store, w, pp,
                                                     derive_seed(split_seed, {fnv1a64(w.name), 0xE3BULL}), true));
    }

    struct SplitData {
      const TrainTestSplit* split;
      std::shared_ptr<const Vocabulary> vocab;  // Cumulative set of the training window
      DocumentTermMatrix train;                 // stage-1 training users
      std::vector<DocumentTermMatrix> tests;    // stage-1 test users, per test window
      std::vector<StabilityTable> tables;
    };
    std::vector<SplitData> sd;
    for (const auto& s : plan.splits) {
      SplitData d{&s, nullptr, {}, {}, {}};
      const auto& tw = windows.at(s.train.name);
      const auto cum = select_cumulative(tw.train_counts, pp.select_min_freq);
      require(!cum.empty(), "harness", "no term exceeds the frequency floor in window '" + s.train.name + "'");
      std::vector<std::uint64_t> f;
      for (const auto& t : cum) f.push_back(tw.train_counts.at(t));
      d.vocab = std::make_shared<const Vocabulary>(cum, f);
      d.train = detail::users_matrix(tw.slice, train_ids, d.vocab, plan.min_posts);
      for (const auto& t : s.tests) {
        const auto& ww = windows.at(t.name);
        d.tests.push_back(detail::users_matrix(ww.slice, test_ids, d.vocab, plan.min_posts));
        auto sp = pp.stability;
        sp.workers = plan.workers;
        d.tables.push_back(stability_table(*tw.space, *ww.space, sp, s.train.name, t.name));
      }
      sd.push_back(std::move(d));
    }

    // Stage-2 sizes: equal training users across windows, balanced classes.
    std::size_t n_train = 0;
    for (std::size_t i = 0; i < sd.size(); ++i) {
      auto [neg, pos] = detail::rows_by_class(sd[i].train);
      const auto n = detail::per_class_size(plan.train_per_class, plan.subsample, neg.size(), pos.size(),
                                            "training window '" + sd[i].split->train.name + "'");
      n_train = i == 0 ? n : std::min(n_train, n);
    }
    std::vector<std::vector<std::size_t>> n_test(sd.size());
    for (std::size_t i = 0; i < sd.size(); ++i)
      for (std::size_t t = 0; t < sd[i].tests.size(); ++t) {
        auto [neg, pos] = detail::rows_by_class(sd[i].tests[t]);
        n_test[i].push_back(detail::per_class_size(plan.test_per_class, plan.subsample, neg.size(), pos.size(),
                                                   "test window '" + sd[i].split->tests[t].name + "'"));
      }

    // Leakage: no held-out user contributes to embeddings or classifier rows.
    for (const auto& d : sd)
      for (const auto& id : d.train.row_ids()) leakage_free = leakage_free && !test_ids.count(id);
    for (const auto& id : train_ids) leakage_free = leakage_free && !test_ids.count(id);

    std::vector<std::vector<RunRecord>> slots(plan.inner_repeats);
    parallel_for(plan.inner_repeats, plan.workers, [&](std::size_t inner) {
      const auto sample_seed = derive_seed(split_seed, {0x5A3ULL, inner});
      Rng rng(sample_seed);
      for (std::size_t i = 0; i < sd.size(); ++i) {
        const auto& d = sd[i];
        const auto train = d.train.select_rows(detail::balanced_sample(d.train, n_train, rng));
        FitOptions fo;
        fo.cv = pp.cv;
        fo.cv.seed = derive_seed(sample_seed, {i, 0xC5ULL});
        fo.cv.workers = 1;
        detail::ModelCache cache;
        for (std::size_t t = 0; t < d.tests.size(); ++t) {
          const auto test = d.tests[t].select_rows(detail::balanced_sample(d.tests[t], n_test[i][t], rng));
          const auto& src = sd[i].split->train.name;
          const auto& tgt = d.split->tests[t].name;
          Selector sel({&windows.at(src).train_counts, &windows.at(tgt).train_counts, &train, nullptr, &d.tables[t],
                        derive_seed(sample_seed, {i, t, 0x7A4DULL}), pp.select_min_freq});
          std::optional<ClassifierModel> coef;
          if (detail::needs_model(pp)) {
            coef = cache.get(train, *sel.base(), fo, to_string(Method::Intersection), 100).model;
            sel = Selector({&windows.at(src).train_counts, &windows.at(tgt).train_counts, &train, &*coef,
                            &d.tables[t], derive_seed(sample_seed, {i, t, 0x7A4DULL}), pp.select_min_freq});
          }
          for (const auto& [m, p] : grid) {
            const auto chosen = sel.select(m, p);
            require(!chosen.terms.empty(), "harness", to_string(m) + " selected no terms at p=" + std::to_string(p));
            const auto& ts = cache.get(train, chosen.terms, fo, to_string(m), p);
            RunRecord r;
            r.outer = outer;
            r.inner = inner;
            r.method = to_string(m);
            r.p = p;
            r.train_window = src;
            r.test_window = tgt;
            r.test_f1 = evaluate_f1(ts.model, test).f1;
            r.dev_f1 = ts.dev;
            r.C = ts.model.C;
            r.vocab_size = chosen.terms.size();
            r.vocab_hash = vocabulary_hash(chosen.terms);
            r.split_seed = split_seed;
            r.sample_seed = sample_seed;
            slots[inner].push_back(std::move(r));
          }
        }
      }
    });
    for (auto& s : slots) result.records.insert(result.records.end(), s.begin(), s.end());
  }
  result.leakage_free = leakage_free;
  require(leakage_free, "harness", "held-out users leaked into training data");
  result.cells = aggregate_records(result.records);
  result.table = summarize(result.records, plan.bootstrap_samples, derive_seed(plan.seed, "bootstrap"));
  return result;
}

inline GeneralizationResult run_generalization(const PostStore& labeled, const ExperimentPlan& plan) {
  return run_generalization(tokenize_store(labeled, plan.workers), plan);
}

// ---- practical-effects protocol -----------------------------------------------------------

struct PracticalRecord {
  std::size_t outer = 0;
  std::size_t inner = 0;
  std::string method;
  int p = 100;
  double f1 = 0.0;  // held-out users, labeled span
  double dev_f1 = 0.0;
  double C = 0.0;
  PrevalenceEstimate pre;
  PrevalenceEstimate during;
  PrevalenceChange change;
  std::size_t vocab_size = 0;
  std::uint64_t vocab_hash = 0;
};

struct CurvePoint {
  std::string method;
  int p = 100;
  double f1_mean = 0.0, f1_sd = 0.0;
  double change_mean = 0.0, change_sd = 0.0;  // absolute, as a proportion
  std::size_t n = 0;
};

struct DivergenceFinding {
  std::string method;
  int p = 100;
  double f1_gap = 0.0;      // |F1(cell) - F1(reference)|
  double change_gap = 0.0;  // |change(cell) - change(reference)|
};

struct DivergenceReport {
  std::string reference = "cumulative";
  int reference_p = 100;
  double f1_tolerance = 0.01;
  double change_floor = 0.05;
  std::vector<DivergenceFinding> findings;
  bool detected() const { return !findings.empty(); }
};

struct PracticalResult {
  std::string dataset;
  std::vector<PracticalRecord> records;
  std::vector<CurvePoint> curves;
  DivergenceReport divergence;
  std::vector<NeighborDiff> shift_report;  // least stable unlabeled terms, pre vs during
  std::vector<std::pair<std::string, double>> least_stable;
  bool leakage_free = false;
};

inline std::vector<CurvePoint> practical_curves(const std::vector<PracticalRecord>& records) {
  std::map<std::pair<std::string, int>, std::pair<std::vector<double>, std::vector<double>>> g;
  for (const auto& r : records) {
    auto& e = g[{r.method, r.p}];
    e.first.push_back(r.f1);
    e.second.push_back(r.change.absolute);
  }
  std::vector<CurvePoint> out;
  for (const auto& [k, v] : g)
    out.push_back({k.first, k.second, detail::mean_of(v.first), detail::sd_of(v.first), detail::mean_of(v.second),
                   detail::sd_of(v.second), v.first.size()});
  return out;
}

// Cells whose F1 is within `f1_tolerance` of the reference while their mean
// prevalence change differs by at least `change_floor`.
inline DivergenceReport detect_divergence(const std::vector<CurvePoint>& curves, double f1_tolerance,
                                          double change_floor, const std::string& reference = "cumulative",
                                          int reference_p = 100) {
  DivergenceReport rep{reference, reference_p, f1_tolerance, change_floor, {}};
  const CurvePoint* ref = nullptr;
  for (const auto& c : curves)
    if (c.method == reference && c.p == reference_p) ref = &c;
  require(ref != nullptr, "harness", "divergence reference '" + reference + "' is missing from the curves");
  for (const auto& c : curves) {
    if (&c == ref) continue;
    const double df = std::abs(c.f1_mean - ref->f1_mean), dc = std::abs(c.change_mean - ref->change_mean);
    if (df < f1_tolerance && dc >= change_floor) rep.findings.push_back({c.method, c.p, df, dc});
  }
  return rep;
}

namespace detail {

// Bernoulli(`share`) sample of posts, users kept whole in structure.
inline TokenizedStore sample_posts(const TokenizedStore& store, double share, std::uint64_t seed) {
  Rng rng(seed);
  TokenizedStore out;
  for (const auto& u : store) {
    TokenizedTimeline t{u.user_id, u.label, {}};
    for (const auto& p : u.posts)
      if (rng.uniform() < share) t.posts.push_back(p);
    if (!t.posts.empty()) out.push_back(std::move(t));
  }
  return out;
}

}  // namespace detail

inline PracticalResult run_practical(const TokenizedStore& labeled, const TokenizedStore& unlabeled,
                                     const ExperimentPlan& plan) {
  plan.validate_practical();
  for (const auto& u : labeled) require(u.label.has_value(), "harness", "user '" + u.user_id + "' has no label");
  const auto& pp = plan.params;
  const auto grid = detail::method_grid(pp);
  const Period full{"unlabeled_full", plan.pre.start, plan.during.end};

  auto has_posts = [&](const Period& p) {
    for (const auto& u : unlabeled)
      for (const auto& q : u.posts)
        if (p.contains(q.timestamp)) return true;
    return false;
  };
  require(has_posts(plan.pre), "harness", "unlabeled corpus has no posts in period '" + plan.pre.name + "'");
  require(has_posts(plan.during), "harness", "unlabeled corpus has no posts in period '" + plan.during.name + "'");

  PracticalResult result;
  result.dataset = plan.dataset;

  // Unlabeled embeddings: full span, pre and during, each on a post sample.
  const auto sample = detail::sample_posts(unlabeled, plan.unlabeled_sample, derive_seed(plan.seed, "unlabeled-sample"));
  const auto uw_full = detail::prepare_window(sample, sample, full, pp, derive_seed(plan.seed, "embed-full"), true);
  const auto uw_pre = detail::prepare_window(sample, sample, plan.pre, pp, derive_seed(plan.seed, "embed-pre"), true);
  const auto uw_during =
      detail::prepare_window(sample, sample, plan.during, pp, derive_seed(plan.seed, "embed-during"), true);
  {
    auto sp = pp.stability;
    sp.workers = plan.workers;
    const auto t = stability_table(*uw_pre.space, *uw_during.space, sp, plan.pre.name, plan.during.name);
    for (std::size_t i = 0; i < std::min(plan.shift_report_terms, t.records.size()); ++i) {
      result.least_stable.emplace_back(t.records[i].term, t.records[i].S);
      result.shift_report.push_back(neighbor_diff(*uw_pre.space, *uw_during.space, t.records[i].term, 15, sp.cf_nb,
                                                  sp.cf_shift));
    }
  }
  // Deployment users phrased with the period's phraser (learned on the sample).
  const auto pre_slice = slice_corpus(unlabeled, {plan.pre}, {uw_pre.phrases}).slices[0];
  const auto during_slice = slice_corpus(unlabeled, {plan.during}, {uw_during.phrases}).slices[0];

  bool leakage_free = true;
  for (std::size_t outer = 0; outer < plan.outer_repeats; ++outer) {
    const auto split_seed = derive_seed(plan.seed, {0x9A1ULL, outer});
    const auto [train_ids, test_ids] = detail::split_users(labeled, plan.test_fraction, split_seed);
    const auto train_store = detail::restrict_users(labeled, train_ids);
    const auto lw = detail::prepare_window(labeled, train_store, plan.labeled_span, pp,
                                           derive_seed(split_seed, {0xE3BULL}), true);
    auto sp = pp.stability;
    sp.workers = plan.workers;
    const auto table = stability_table(*lw.space, *uw_full.space, sp, plan.labeled_span.name, full.name);

    const auto cum = select_cumulative(lw.train_counts, pp.select_min_freq);
    require(!cum.empty(), "harness", "no labeled term exceeds the frequency floor");
    std::vector<std::uint64_t> f;
    for (const auto& t : cum) f.push_back(lw.train_counts.at(t));
    const auto vocab = std::make_shared<const Vocabulary>(cum, f);
    const auto train_all = detail::users_matrix(lw.slice, train_ids, vocab, plan.min_posts);
    const auto test_all = detail::users_matrix(lw.slice, test_ids, vocab, plan.min_posts);
    const auto pre_m = aggregate_slice(pre_slice, vocab, plan.min_posts);
    const auto during_m = aggregate_slice(during_slice, vocab, plan.min_posts);
    for (const auto& id : train_all.row_ids()) leakage_free = leakage_free && !test_ids.count(id);

    auto [trn, trp] = detail::rows_by_class(train_all);
    const auto n_train = detail::per_class_size(plan.train_per_class, plan.subsample, trn.size(), trp.size(),
                                                "labeled training split");
    auto [ten, tep] = detail::rows_by_class(test_all);
    const auto n_test =
        detail::per_class_size(plan.test_per_class, plan.subsample, ten.size(), tep.size(), "labeled test split");

    std::vector<std::vector<PracticalRecord>> slots(plan.inner_repeats);
    parallel_for(plan.inner_repeats, plan.workers, [&](std::size_t inner) {
      const auto sample_seed = derive_seed(split_seed, {0x5A3ULL, inner});
      Rng rng(sample_seed);
      const auto train = train_all.select_rows(detail::balanced_sample(train_all, n_train, rng));
      const auto test = test_all.select_rows(detail::balanced_sample(test_all, n_test, rng));
      FitOptions fo;
      fo.cv = pp.cv;
      fo.cv.seed = derive_seed(sample_seed, {0xC5ULL});
      fo.cv.workers = 1;
      detail::ModelCache cache;
      const auto random_seed = derive_seed(sample_seed, {0x7A4DULL});
      Selector sel({&lw.train_counts, &uw_full.train_counts, &train, nullptr, &table, random_seed, pp.select_min_freq});
      std::optional<ClassifierModel> coef;
      if (detail::needs_model(pp)) {
        coef = cache.get(train, *sel.base(), fo, to_string(Method::Intersection), 100).model;
        sel = Selector({&lw.train_counts, &uw_full.train_counts, &train, &*coef, &table, random_seed,
                        pp.select_min_freq});
      }
      for (const auto& [m, p] : grid) {
        const auto chosen = sel.select(m, p);
        require(!chosen.terms.empty(), "harness", to_string(m) + " selected no terms at p=" + std::to_string(p));
        const auto& ts = cache.get(train, chosen.terms, fo, to_string(m), p);
        PracticalRecord r;
        r.outer = outer;
        r.inner = inner;
        r.method = to_string(m);
        r.p = p;
        r.f1 = evaluate_f1(ts.model, test).f1;
        r.dev_f1 = ts.dev;
        r.C = ts.model.C;
        r.pre = estimate_prevalence(ts.model, pre_m, plan.min_posts, plan.pre.name);
        r.during = estimate_prevalence(ts.model, during_m, plan.min_posts, plan.during.name);
        r.change = prevalence_change(r.pre, r.during);
        r.vocab_size = chosen.terms.size();
        r.vocab_hash = vocabulary_hash(chosen.terms);
        slots[inner].push_back(std::move(r));
      }
    });
    for (auto& s : slots) result.records.insert(result.records.end(), s.begin(), s.end());
  }
  result.leakage_free = leakage_free;
  require(leakage_free, "harness", "held-out users leaked into training data");
  result.curves = practical_curves(result.records);
  const bool has_ref = std::any_of(result.curves.begin(), result.curves.end(),
                                   [](const CurvePoint& c) { return c.method == "cumulative" && c.p == 100; });
  if (has_ref) result.divergence = detect_divergence(result.curves, plan.divergence_f1_tolerance, plan.divergence_floor);
  return result;
}

inline PracticalResult run_practical(const PostStore& labeled, const PostStore& unlabeled, const ExperimentPlan& plan) {
  return run_practical(tokenize_store(labeled, plan.workers), tokenize_store(unlabeled, plan.workers), plan);
}

// ---- outputs ------------------------------------------------------------------------------

inline void save_run_records_csv(const std::filesystem::path& path, const std::string& dataset,
                                 const std::vector<RunRecord>& records) {
  auto out = open_output(path);
  out << "dataset,outer,inner,train_window,test_window,method,p,test_f1,dev_f1,C,vocab_size,vocab_hash\n";
  for (const auto& r : records)
    out << csv_field(dataset) << ',' << r.outer << ',' << r.inner << ',' << csv_field(r.train_window) << ','
        << csv_field(r.test_window) << ',' << r.method << ',' << r.p << ',' << format_real(r.test_f1) << ','
        << format_real(r.dev_f1) << ',' << format_real(r.C) << ',' << r.vocab_size << ',' << r.vocab_hash << '\n';
}

// One row per (dataset, train window, test window, method) at the method's
// best percentile.
inline void save_generalization_table_csv(const std::filesystem::path& path, const GeneralizationResult& res) {
  auto out = open_output(path);
  out << "dataset,train_window,test_window,method,best_p,mean_f1,sd_f1,n,diff_vs_cumulative,ci_low,ci_high,"
         "significant\n";
  for (const auto& b : res.table)
    out << csv_field(res.dataset) << ',' << csv_field(b.train_window) << ',' << csv_field(b.test_window) << ','
        << b.method << ',' << b.best_p << ',' << format_real(b.mean) << ',' << format_real(b.sd) << ',' << b.n << ','
        << format_real(b.diff_vs_cumulative) << ',' << format_real(b.ci_low) << ',' << format_real(b.ci_high) << ','
        << (b.significant ? 1 : 0) << '\n';
}

inline void save_cells_csv(const std::filesystem::path& path, const std::vector<Cell>& cells) {
  auto out = open_output(path);
  out << "train_window,test_window,method,p,mean_f1,sd_f1,n\n";
  for (const auto& c : cells)
    out << csv_field(c.train_window) << ',' << csv_field(c.test_window) << ',' << c.method << ',' << c.p << ','
        << format_real(c.mean) << ',' << format_real(c.sd) << ',' << c.n << '\n';
}

inline void write_generalization(const std::filesystem::path& dir, const GeneralizationResult& res) {
  save_run_records_csv(dir / "generalization_records.csv", res.dataset, res.records);
  save_cells_csv(dir / "generalization_cells.csv", res.cells);
  save_generalization_table_csv(dir / "generalization_table.csv", res);
}

inline void save_practical_records_csv(const std::filesystem::path& path, const std::vector<PracticalRecord>& records) {
  auto out = open_output(path);
  out << "outer,inner,method,p,f1,dev_f1,C,prevalence_pre,prevalence_during,change_abs,change_rel,vocab_size,"
         "vocab_hash\n";
  for (const auto& r : records)
    out << r.outer << ',' << r.inner << ',' << r.method << ',' << r.p << ',' << format_real(r.f1) << ','
        << format_real(r.dev_f1) << ',' << format_real(r.C) << ',' << format_real(r.pre.prevalence) << ','
        << format_real(r.during.prevalence) << ',' << format_real(r.change.absolute) << ','
        << (r.change.relative ? format_real(*r.change.relative) : std::string()) << ',' << r.vocab_size << ','
        << r.vocab_hash << '\n';
}

inline nlohmann::json to_json(const DivergenceReport& d) {
  nlohmann::json f = nlohmann::json::array();
  for (const auto& x : d.findings)
    f.push_back({{"method", x.method}, {"p", x.p}, {"f1_gap", x.f1_gap}, {"change_gap", x.change_gap}});
  return {{"reference", d.reference}, {"reference_p", d.reference_p}, {"f1_tolerance", d.f1_tolerance},
          {"change_floor", d.change_floor}, {"detected", d.detected()}, {"findings", f}};
}

inline nlohmann::json curves_json(const PracticalResult& res) {
  nlohmann::json by_method = nlohmann::json::object();
  for (const auto& c : res.curves) {
    auto& m = by_method[c.method];
    m["p"].push_back(c.p);
    m["f1_mean"].push_back(c.f1_mean);
    m["f1_sd"].push_back(c.f1_sd);
    m["change_mean"].push_back(c.change_mean);
    m["change_sd"].push_back(c.change_sd);
    m["n"].push_back(c.n);
  }
  nlohmann::json shift = nlohmann::json::array();
  for (std::size_t i = 0; i < res.shift_report.size(); ++i) {
    auto j = to_json(res.shift_report[i]);
    j["S"] = res.least_stable[i].second;
    shift.push_back(j);
  }
  return {{"dataset", res.dataset}, {"curves", by_method}, {"divergence", to_json(res.divergence)}, {"shift_report", shift}};
}

inline void write_practical(const std::filesystem::path& dir, const PracticalResult& res) {
  save_practical_records_csv(dir / "practical_records.csv", res.records);
  auto out = open_output(dir / "practical_curves.json");
  out << curves_json(res).dump(2) << '\n';
}

}  // namespace semstab
