#include <gtest/gtest.h>

#include <set>

#include "support.hpp"

using namespace semstab;

static std::size_t brute_overlap(const EmbeddingSpace& P, const EmbeddingSpace& Q, const std::string& w, std::size_t k,
                                 std::uint64_t cf_nb) {
  const auto a = testsupport::brute_neighbors(P, w, k, cf_nb);
  const auto b = testsupport::brute_neighbors(Q, w, k, cf_nb);
  std::set<std::string> sa(a.begin(), a.end());
  std::size_t n = 0;
  for (const auto& t : b) n += sa.count(t);
  return n;
}

TEST(Stability, IdenticalSpacesScoreOne) {
  const auto s = testsupport::random_space(120, 5, 1, 60, 100);
  StabilityParams p;
  p.k = 20;
  const auto t = stability_table(s, s, p);
  ASSERT_EQ(t.records.size(), s.size());
  for (std::size_t i = 0; i < t.records.size(); ++i) {
    EXPECT_EQ(t.records[i].S, 1.0);
    if (i) {
      EXPECT_LT(t.records[i - 1].term, t.records[i].term);
    }
  }
}

TEST(Stability, SetArithmetic) {
  // nb_P(w) = {a, b}, nb_Q(w) = {b, c} with k = 2.
  const auto P = testsupport::space_of({"w", "a", "b", "c"}, {60, 60, 60, 60},
                                       {{1, 0}, {0.95f, 0.05f}, {0.9f, 0.2f}, {-1, 0}});
  const auto Q = testsupport::space_of({"w", "a", "b", "c"}, {60, 60, 60, 60},
                                       {{1, 0}, {-1, 0.1f}, {0.9f, 0.2f}, {0.95f, 0.05f}});
  EXPECT_DOUBLE_EQ(stability(P, Q, "w", 2), 0.5);
}

TEST(Stability, AntipodalNeighboursScoreZero) {
  const std::vector<std::string> terms = {"w", "a", "b", "c", "d", "e"};
  const std::vector<std::uint64_t> f(6, 60);
  const auto P = testsupport::space_of(terms, f, {{1, 0}, {1, 0.1f}, {1, -0.1f}, {0, 1}, {0, -1}, {-1, 0.3f}});
  const auto Q = testsupport::space_of(terms, f, {{1, 0}, {-1, 0.1f}, {-1, -0.1f}, {0.2f, 1}, {0.2f, -1}, {-1, 0.3f}});
  EXPECT_EQ(testsupport::brute_neighbors(P, "w", 2, 50), (std::vector<std::string>{"a", "b"}));
  EXPECT_DOUBLE_EQ(stability(P, Q, "w", 2), 0.0);
}

TEST(Stability, ErrorsNameFailingSide) {
  const auto P = testsupport::space_of({"w", "a"}, {60, 60}, {{1, 0}, {0, 1}});
  const auto Q = testsupport::space_of({"w", "a"}, {10, 60}, {{1, 0}, {0, 1}});
  try {
    stability(P, Q, "w", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("Q"), std::string::npos);
  }
  EXPECT_THROW(stability(P, Q, "missing", 1), Error);
}

TEST(Stability, TableGateTooStrict) {
  const auto s = testsupport::random_space(30, 4, 2, 1, 100);
  StabilityParams p;
  p.k = 5;
  p.cf_shift = 1000;
  EXPECT_THROW(stability_table(s, s, p), Error);
}

TEST(Stability, OracleSymmetryAndQuantization) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto P = testsupport::random_space(250, 6, seed, 1, 150);
    const auto Q = testsupport::random_space(250, 6, seed + 100, 1, 150);
    StabilityParams p;
    p.k = 30;
    const auto pq = stability_table(P, Q, p), qp = stability_table(Q, P, p);
    ASSERT_EQ(pq.records.size(), qp.records.size());
    std::map<std::string, double> rev;
    for (const auto& r : qp.records) rev[r.term] = r.S;
    for (const auto& r : pq.records) {
      EXPECT_EQ(r.S, rev.at(r.term));
      const double scaled = r.S * static_cast<double>(r.k_used);
      EXPECT_NEAR(scaled, std::round(scaled), 1e-9);
      EXPECT_GE(r.S, 0.0);
      EXPECT_LE(r.S, 1.0);
      EXPECT_EQ(r.overlap, brute_overlap(P, Q, r.term, 30, 50));
      EXPECT_GE(r.freq_P, 50u);
      EXPECT_GE(r.freq_Q, 50u);
    }
    for (std::size_t i = 0; i < P.size(); ++i) {
      const auto& t = P.vocabulary().term(i);
      const bool eligible = P.vocabulary().frequency(i) >= 50 && Q.vocabulary().frequency(*Q.vocabulary().find(t)) >= 50;
      EXPECT_EQ(pq.find(t) != nullptr, eligible);
    }
  }
}

TEST(Stability, SmallPoolFlagged) {
  const auto s = testsupport::random_space(20, 4, 3, 60, 100);
  StabilityParams p;
  p.k = 50;
  const auto t = stability_table(s, s, p);
  for (const auto& r : t.records) {
    EXPECT_TRUE(r.flagged);
    EXPECT_EQ(r.k_used, 19u);
    EXPECT_EQ(r.S, 1.0);
  }
}

TEST(Stability, RaisingCfNbShrinksPool) {
  const auto s = testsupport::random_space(200, 4, 4, 1, 200);
  std::size_t prev = s.size() + 1;
  for (std::uint64_t cf : {1, 50, 100, 150}) {
    NeighborIndex idx(s, cf);
    EXPECT_LE(idx.pool().size(), prev);
    prev = idx.pool().size();
  }
}

TEST(Stability, ParallelMatchesSerial) {
  const auto P = testsupport::random_space(200, 5, 7, 1, 150);
  const auto Q = testsupport::random_space(200, 5, 8, 1, 150);
  StabilityParams a;
  a.k = 25;
  StabilityParams b = a;
  b.workers = 4;
  const auto ta = stability_table(P, Q, a), tb = stability_table(P, Q, b);
  ASSERT_EQ(ta.records.size(), tb.records.size());
  for (std::size_t i = 0; i < ta.records.size(); ++i) {
    EXPECT_EQ(ta.records[i].term, tb.records[i].term);
    EXPECT_EQ(ta.records[i].S, tb.records[i].S);
  }
}

TEST(NeighborDiff, IdenticalAndDisjoint) {
  const auto s = testsupport::random_space(60, 4, 9, 60, 100);
  const auto w = s.vocabulary().term(0);
  const auto same = neighbor_diff(s, s, w, 10);
  EXPECT_TRUE(same.p_only.empty());
  EXPECT_TRUE(same.q_only.empty());
  EXPECT_EQ(same.shared.size(), 10u);

  const std::vector<std::string> terms = {"w", "a", "b", "c", "d"};
  const std::vector<std::uint64_t> f(5, 60);
  const auto P = testsupport::space_of(terms, f, {{1, 0}, {1, 0.1f}, {1, -0.1f}, {-1, 0.1f}, {-1, -0.1f}});
  const auto Q = testsupport::space_of(terms, f, {{1, 0}, {-1, 0.1f}, {-1, -0.1f}, {1, 0.1f}, {1, -0.1f}});
  const auto d = neighbor_diff(P, Q, "w", 2);
  EXPECT_TRUE(d.shared.empty());
  EXPECT_EQ(d.p_only, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(d.q_only, (std::vector<std::string>{"c", "d"}));
}

TEST(StabilityIo, CsvRoundTrip) {
  testsupport::TempDir dir("shift");
  const auto P = testsupport::random_space(80, 4, 10, 40, 120);
  const auto Q = testsupport::random_space(80, 4, 11, 40, 120);
  StabilityParams p;
  p.k = 10;
  const auto t = stability_table(P, Q, p);
  save_stability_csv(dir / "s.csv", t);
  const auto back = load_stability_csv(dir / "s.csv");
  ASSERT_EQ(back.records.size(), t.records.size());
  for (std::size_t i = 0; i < t.records.size(); ++i) {
    EXPECT_EQ(back.records[i].term, t.records[i].term);
    EXPECT_EQ(back.records[i].S, t.records[i].S);
    EXPECT_EQ(back.records[i].freq_Q, t.records[i].freq_Q);
  }
  std::ifstream in(dir / "s.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "term,S,freq_P,freq_Q");
}
