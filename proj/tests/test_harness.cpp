#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "support.hpp"

using namespace semstab;

static RunRecord rec(std::string method, int p, std::size_t inner, double f1) {
  RunRecord r;
  r.method = std::move(method);
  r.p = p;
  r.inner = inner;
  r.train_window = "a";
  r.test_window = "b";
  r.test_f1 = f1;
  return r;
}

TEST(Aggregate, MeanAndSampleSd) {
  const auto cells = aggregate_records({rec("overlap", 50, 0, 0.6), rec("overlap", 50, 1, 0.8), rec("overlap", 50, 2, 1.0),
                                        rec("cumulative", 100, 0, 0.5)});
  ASSERT_EQ(cells.size(), 2u);
  const auto& c = cells[1].method == "overlap" ? cells[1] : cells[0];
  EXPECT_NEAR(c.mean, 0.8, 1e-12);
  EXPECT_NEAR(c.sd, 0.2, 1e-12);
  EXPECT_EQ(c.n, 3u);
}

TEST(Bootstrap, ConstantAndZeroDifferences) {
  const auto a = paired_bootstrap({0.9, 0.8, 0.7}, {0.8, 0.7, 0.6}, 500, 1);
  EXPECT_NEAR(a.mean, 0.1, 1e-12);
  EXPECT_NEAR(a.low, 0.1, 1e-12);
  EXPECT_NEAR(a.high, 0.1, 1e-12);
  EXPECT_TRUE(a.significant);
  const auto z = paired_bootstrap({0.5, 0.6}, {0.5, 0.6}, 500, 1);
  EXPECT_FALSE(z.significant);
  const auto mixed = paired_bootstrap({0.1, 0.9, 0.5, 0.5}, {0.9, 0.1, 0.5, 0.5}, 2000, 3);
  EXPECT_LE(mixed.low, 0.0);
  EXPECT_GE(mixed.high, 0.0);
  EXPECT_FALSE(mixed.significant);
  EXPECT_THROW(paired_bootstrap({1}, {}, 10, 1), Error);
}

TEST(Summarize, BestPercentileTiesToSmallerP) {
  std::vector<RunRecord> r;
  for (std::size_t i = 0; i < 4; ++i) {
    r.push_back(rec("cumulative", 100, i, 0.5));
    r.push_back(rec("overlap", 30, i, 0.9));
    r.push_back(rec("overlap", 70, i, 0.9));
    r.push_back(rec("overlap", 90, i, 0.6));
  }
  const auto t = summarize(r, 200, 1);
  ASSERT_EQ(t.size(), 2u);
  const auto& o = t[0].method == "overlap" ? t[0] : t[1];
  EXPECT_EQ(o.best_p, 30);
  EXPECT_NEAR(o.diff_vs_cumulative, 0.4, 1e-12);
  EXPECT_TRUE(o.significant);
}

static CurvePoint point(std::string m, int p, double f1, double change) {
  CurvePoint c;
  c.method = std::move(m);
  c.p = p;
  c.f1_mean = f1;
  c.change_mean = change;
  return c;
}

TEST(Divergence, FindsEqualF1DifferentChange) {
  const std::vector<CurvePoint> curves = {point("cumulative", 100, 0.80, 0.30), point("overlap", 50, 0.805, 0.10),
                                          point("overlap", 90, 0.805, 0.28), point("random", 50, 0.70, 0.00)};
  const auto d = detect_divergence(curves, 0.01, 0.05);
  ASSERT_EQ(d.findings.size(), 1u);
  EXPECT_EQ(d.findings[0].method, "overlap");
  EXPECT_EQ(d.findings[0].p, 50);
  EXPECT_NEAR(d.findings[0].change_gap, 0.20, 1e-12);
  EXPECT_TRUE(d.detected());
  // F1 gap must be strictly under the tolerance; the change gap may equal the floor.
  const auto edge = detect_divergence({point("cumulative", 100, 0.5, 0.0), point("a", 10, 0.5 + 0.0625, 0.25),
                                       point("b", 10, 0.5, 0.0625)},
                                      0.0625, 0.0625);
  ASSERT_EQ(edge.findings.size(), 1u);
  EXPECT_EQ(edge.findings[0].method, "b");
  EXPECT_THROW(detect_divergence({point("x", 1, 0, 0)}, 0.01, 0.05), Error);
}

static TokenizedStore labeled_store(std::size_t users) {
  std::vector<Post> posts;
  for (std::size_t u = 0; u < users; ++u)
    for (int i = 0; i < 3; ++i)
      posts.push_back(testsupport::post("u" + std::to_string(u), 1000 + i, "a b c", static_cast<int>(u % 2)));
  return tokenize_store(PostStore::from_posts(std::move(posts)));
}

TEST(Splits, DisjointAndRounded) {
  const auto store = labeled_store(37);
  const auto [train, test] = detail::split_users(store, 0.2, 5);
  EXPECT_EQ(test.size(), 7u);
  EXPECT_EQ(train.size(), 30u);
  for (const auto& t : test) EXPECT_FALSE(train.count(t));
  EXPECT_EQ(detail::split_users(store, 0.2, 5).second, test);
  EXPECT_NE(detail::split_users(store, 0.2, 6).second, test);
}

TEST(Splits, BalancedSampleAndSizes) {
  DocumentTermMatrix m(testsupport::vocab_of({"a"}, {1}));
  for (int r = 0; r < 30; ++r) m.add_row("r" + std::to_string(r), {{0, 1}}, 1, r < 10 ? 1 : 0);
  Rng rng(2);
  const auto rows = detail::balanced_sample(m, 8, rng);
  EXPECT_TRUE(std::is_sorted(rows.begin(), rows.end()));
  EXPECT_EQ(std::set<std::size_t>(rows.begin(), rows.end()).size(), 16u);
  int pos = 0;
  for (auto r : rows) pos += m.label(r) == 1;
  EXPECT_EQ(pos, 8);
  EXPECT_EQ(detail::per_class_size(0, 0.8, 20, 10, "x"), 8u);
  EXPECT_THROW(detail::per_class_size(11, 0.8, 20, 10, "x"), Error);
  EXPECT_THROW(detail::per_class_size(0, 0.8, 20, 2, "x"), Error);
}

TEST(ModelCacheTest, SameTermSetSharesModel) {
  DocumentTermMatrix m(testsupport::vocab_of({"a", "b", "c"}, {5, 5, 5}));
  for (int r = 0; r < 20; ++r)
    m.add_row("r" + std::to_string(r), {{0, static_cast<std::uint32_t>(1 + r % 2 * 3)}, {1, 2}, {2, 1}}, 1, r % 2);
  FitOptions fo;
  fo.fixed_C = 1.0;
  detail::ModelCache cache;
  const auto& x = cache.get(m, {"a", "b"}, fo, "frequency", 50);
  const auto& y = cache.get(m, {"b", "a"}, fo, "overlap", 70);
  const auto& z = cache.get(m, {"a", "c"}, fo, "overlap", 70);
  EXPECT_EQ(&x, &y);
  EXPECT_NE(&x, &z);
  EXPECT_EQ(vocabulary_hash({"b", "a"}), vocabulary_hash({"a", "b"}));
}

TEST(Grid, BaselinesRunOnce) {
  PipelineParams pp;
  const auto g = detail::method_grid(pp);
  EXPECT_EQ(g.size(), 2u + 6u * 10u);
  EXPECT_EQ(std::count(g.begin(), g.end(), std::pair{Method::Cumulative, 100}), 1);
  pp.methods = {Method::Frequency, Method::Overlap};
  EXPECT_FALSE(detail::needs_model(pp));
  pp.methods.push_back(Method::Weighted);
  EXPECT_TRUE(detail::needs_model(pp));
}

static SynthSpec tiny_spec(std::size_t deployment) {
  SynthSpec s;
  s.vocab_size = 300;
  s.background_terms = 20;
  s.topics = 5;
  s.users_per_class = 30;
  s.posts_per_user = 30;
  s.shift_fraction = 0.1;
  s.signal_fraction = 0.1;
  s.signal_boost = 3.0;
  s.deployment_users = deployment;
  s.seed = 4;
  return s;
}

static ExperimentPlan tiny_plan(const SynthSpec& s) {
  ExperimentPlan plan;
  plan.outer_repeats = 1;
  plan.inner_repeats = 2;
  plan.min_posts = 10;
  plan.bootstrap_samples = 100;
  plan.seed = 11;
  plan.splits = {{s.period1, {s.period2}}};
  auto& pp = plan.params;
  pp.embed.dim = 16;
  pp.embed.epochs = 2;
  pp.stability.k = 20;
  pp.stability.cf_nb = 10;
  pp.stability.cf_shift = 10;
  pp.select_min_freq = 10;
  pp.methods = {Method::Cumulative, Method::Intersection, Method::Random, Method::Coefficient, Method::Overlap,
                Method::Weighted};
  pp.percentiles = {50, 100};
  pp.cv.grid = {1.0};
  return plan;
}

TEST(Generalization, TinyRunRecordsAndDeterminism) {
  const auto spec = tiny_spec(0);
  const auto corpus = generate(spec);
  auto plan = tiny_plan(spec);
  const auto a = run_generalization(corpus.labeled(), plan);
  EXPECT_TRUE(a.leakage_free);
  EXPECT_EQ(a.records.size(), 2u * (2u + 4u * 2u));
  for (const auto& r : a.records) {
    EXPECT_GE(r.test_f1, 0.0);
    EXPECT_LE(r.test_f1, 1.0);
    EXPECT_GT(r.vocab_size, 0u);
    EXPECT_EQ(r.train_window, spec.period1.name);
  }
  EXPECT_EQ(a.table.size(), 6u);
  plan.workers = 2;
  const auto b = run_generalization(corpus.labeled(), plan);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].vocab_hash, b.records[i].vocab_hash);
    EXPECT_EQ(a.records[i].test_f1, b.records[i].test_f1);
  }
  testsupport::TempDir dir("harness");
  write_generalization(dir.path(), a);
  for (auto f : {"generalization_records.csv", "generalization_cells.csv", "generalization_table.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
}

TEST(Generalization, InvalidPlansRejected) {
  const auto spec = tiny_spec(0);
  const auto corpus = generate(spec);
  auto plan = tiny_plan(spec);
  plan.splits.clear();
  EXPECT_THROW(run_generalization(corpus.labeled(), plan), Error);
  plan = tiny_plan(spec);
  plan.min_posts = 1000;
  EXPECT_THROW(run_generalization(corpus.labeled(), plan), Error);
  plan = tiny_plan(spec);
  EXPECT_THROW(run_generalization(generate(tiny_spec(5)).posts, plan), Error);  // deployment users carry no label
}

TEST(Practical, TinyRunProducesCurves) {
  const auto spec = tiny_spec(60);
  const auto corpus = generate(spec);
  auto plan = tiny_plan(spec);
  plan.labeled_span = spec.period1;
  plan.pre = spec.period1;
  plan.during = spec.period2;
  plan.unlabeled_sample = 1.0;
  const auto r = run_practical(corpus.labeled(), corpus.deployment(), plan);
  EXPECT_TRUE(r.leakage_free);
  EXPECT_EQ(r.records.size(), 2u * (2u + 4u * 2u));
  EXPECT_EQ(r.curves.size(), 2u + 4u * 2u);
  for (const auto& rec : r.records) {
    EXPECT_EQ(rec.pre.eligible, 60u);
    EXPECT_NEAR(rec.change.absolute, rec.during.prevalence - rec.pre.prevalence, 1e-15);
  }
  EXPECT_EQ(r.divergence.reference, "cumulative");
  EXPECT_FALSE(r.shift_report.empty());
  testsupport::TempDir dir("practical");
  write_practical(dir.path(), r);
  const auto j = nlohmann::json::parse(read_file(dir / "practical_curves.json"));
  EXPECT_TRUE(j["curves"].contains("overlap"));
  EXPECT_TRUE(j["divergence"].contains("detected"));
}
