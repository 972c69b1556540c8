#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace semstab;

TEST(Prevalence, StrictHalfThreshold) {
  const auto e = prevalence_from_probabilities({0.5, 0.51, 0.9, 0.1}, "pre");
  EXPECT_EQ(e.eligible, 4u);
  EXPECT_EQ(e.positive, 2u);
  EXPECT_DOUBLE_EQ(e.prevalence, 0.5);
  EXPECT_THROW(prevalence_from_probabilities({}), Error);
}

TEST(Prevalence, ChangeAbsoluteAndRelative) {
  PrevalenceEstimate a, b;
  a.prevalence = 0.10;
  b.prevalence = 0.15;
  const auto c = prevalence_change(a, b);
  EXPECT_NEAR(c.absolute, 0.05, 1e-15);
  EXPECT_NEAR(c.absolute_pp(), 5.0, 1e-12);
  ASSERT_TRUE(c.relative.has_value());
  EXPECT_NEAR(*c.relative, 0.5, 1e-12);
  a.prevalence = 0.0;
  const auto z = prevalence_change(a, b);
  EXPECT_FALSE(z.relative.has_value());
  EXPECT_TRUE(z.relative_undefined);
  EXPECT_TRUE(to_json(z)["relative"].is_null());
}

static DocumentTermMatrix user_matrix(std::uint64_t seed, std::size_t users, bool labeled) {
  Rng rng(seed);
  std::vector<std::string> terms;
  for (int j = 0; j < 12; ++j) terms.push_back("k" + std::to_string(j));
  DocumentTermMatrix m(testsupport::vocab_of(terms, std::vector<std::uint64_t>(12, 10)));
  for (std::size_t u = 0; u < users; ++u) {
    const int c = static_cast<int>(u % 2);
    std::vector<DocumentTermMatrix::Entry> e;
    for (std::uint32_t j = 0; j < 12; ++j) {
      const auto n = static_cast<std::uint32_t>(rng.next() % 3 + (j < 2 && c ? 4 : 0));
      if (n) e.push_back({j, n});
    }
    m.add_row("u" + std::to_string(u), e, 1 + rng.next() % 10, labeled ? std::optional<int>(c) : std::nullopt);
  }
  return m;
}

TEST(Prevalence, EligibilityByMinPosts) {
  FitOptions fo;
  fo.fixed_C = 1.0;
  const auto model = fit_classifier(user_matrix(1, 60, true), {"k0", "k1", "k2", "k3"}, fo);
  const auto dep = user_matrix(2, 80, false);
  const auto est = estimate_prevalence(model, dep, 5, "during");
  const auto proba = predict_proba(model, dep);
  std::size_t eligible = 0, positive = 0;
  for (std::size_t r = 0; r < dep.rows(); ++r) {
    if (dep.post_count(r) < 5) continue;
    ++eligible;
    positive += proba[r] > 0.5;
  }
  EXPECT_EQ(est.eligible, eligible);
  EXPECT_EQ(est.positive, positive);
  EXPECT_EQ(est.period, "during");
  EXPECT_THROW(estimate_prevalence(model, dep, 1000, "during"), Error);
}

TEST(Prevalence, DuplicateUserRejected) {
  FitOptions fo;
  fo.fixed_C = 1.0;
  const auto model = fit_classifier(user_matrix(1, 40, true), {"k0", "k1"}, fo);
  auto dep = user_matrix(3, 4, false);
  dep.add_row("u0", {{0, 1}}, 9);
  EXPECT_THROW(estimate_prevalence(model, dep, 1), Error);
}

TEST(KeywordSeries, MonthlyProportionsWithGaps) {
  const auto jan = *parse_utc("2020-01-10T00:00:00Z"), mar = *parse_utc("2020-03-02T00:00:00Z");
  const auto store = PostStore::from_posts({
      testsupport::post("a", jan, "I feel sad today"),
      testsupport::post("a", jan + 60, "nothing here"),
      testsupport::post("b", mar, "so Sad"),
      testsupport::post("b", mar + 60, "feel sad again"),
  });
  const auto s = keyword_series(store, {"sad", "feel sad"});
  ASSERT_EQ(s.size(), 2u);
  ASSERT_EQ(s[0].buckets.size(), 3u);
  EXPECT_EQ(month_label(s[0].buckets[0].month), "2020-01");
  EXPECT_DOUBLE_EQ(*s[0].buckets[0].proportion, 0.5);
  EXPECT_FALSE(s[0].buckets[1].proportion.has_value());
  EXPECT_EQ(s[0].buckets[1].posts, 0u);
  EXPECT_DOUBLE_EQ(*s[0].buckets[2].proportion, 1.0);
  EXPECT_DOUBLE_EQ(*s[1].buckets[0].proportion, 0.5);
  EXPECT_DOUBLE_EQ(*s[1].buckets[2].proportion, 0.5);
  EXPECT_THROW(keyword_series(store, {"   "}), Error);
}

TEST(KeywordSeries, PhraseTokenNeedsPhraseModel) {
  const auto t = *parse_utc("2021-05-01T00:00:00Z");
  const auto store = PostStore::from_posts({testsupport::post("a", t, "feel sad"), testsupport::post("a", t + 1, "sad")});
  EXPECT_DOUBLE_EQ(*keyword_series(store, {"feel_sad"})[0].buckets[0].proportion, 0.0);
  PhraseModel pm;
  pm.add("feel", "sad", 20.0);
  EXPECT_DOUBLE_EQ(*keyword_series(store, {"feel_sad"}, &pm)[0].buckets[0].proportion, 0.5);
}

TEST(Pmi, MatchesSmoothedFormula) {
  const auto m = user_matrix(4, 30, true);
  const auto pmi = pmi_class(m);
  const double V = static_cast<double>(m.cols());
  for (std::size_t j = 0; j < m.cols(); ++j) {
    double pos = 0, all = 0, npos = 0, nall = 0;
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (const auto& e : m.row(r)) {
        nall += e.count;
        if (m.label(r) == 1) npos += e.count;
        if (e.col != j) continue;
        all += e.count;
        if (m.label(r) == 1) pos += e.count;
      }
    const double expect = std::log((pos + 1) / (npos + V)) - std::log((all + 1) / (nall + V));
    EXPECT_NEAR(pmi.at(m.vocabulary().term(j)), expect, 1e-12);
  }
  const auto top = top_pmi_terms(m, 2);
  EXPECT_EQ(std::set<std::string>(top.begin(), top.end()), (std::set<std::string>{"k0", "k1"}));
}

TEST(MonitorIo, CsvExports) {
  testsupport::TempDir dir("monitor");
  PrevalenceRow r{"overlap", 50, prevalence_from_probabilities({0.9, 0.1}, "pre")};
  save_prevalence_csv(dir / "p.csv", {r});
  std::ifstream in(dir / "p.csv");
  std::string h, l;
  std::getline(in, h);
  std::getline(in, l);
  EXPECT_EQ(h, "method,p,period,eligible,positive,prevalence");
  EXPECT_EQ(l.substr(0, 20), "overlap,50,pre,2,1,0");
  KeywordSeries s{"sad", {{600, 3, 0.25}, {601, 0, std::nullopt}}};
  save_keyword_series_csv(dir / "k.csv", {s});
  std::ifstream kin(dir / "k.csv");
  std::vector<std::string> lines;
  for (std::string x; std::getline(kin, x);) lines.push_back(x);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[1], "sad,2020-01,0.25");
  EXPECT_EQ(lines[2], "sad,2020-02,");
}
