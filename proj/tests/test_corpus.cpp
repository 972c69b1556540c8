#include <gtest/gtest.h>

#include <fstream>
#include <numeric>

#include "support.hpp"

using namespace semstab;
using testsupport::post;
using Tokens = std::vector<std::string>;

TEST(Tokenize, EmptyInput) { EXPECT_TRUE(tokenize("").empty()); }

TEST(Tokenize, HashtagAndPunctuationRun) {
  EXPECT_EQ(tokenize("I LOVE #mondays!!"), (Tokens{"i", "love", "#mondays", "!!"}));
}

TEST(Tokenize, UrlAndMention) { EXPECT_EQ(tokenize("see https://x.co @bob"), (Tokens{"see", "<url>", "<user>"})); }

TEST(Tokenize, NumbersAndEmoticons) {
  EXPECT_EQ(tokenize("got 3.5 hours :) sleep"), (Tokens{"got", "<num>", "hours", ":)", "sleep"}));
}

TEST(Tokenize, IdempotentOnJoinedOutput) {
  const std::vector<std::string> texts = {
      "I LOVE #mondays!!", "see https://x.co @bob", "Don't stop... 42 times :-( <3", "mixed CASE, words; and-dashes",
      "www.example.com/path?x=1 is @someone's", "tabs\tand\nnewlines   ok?!"};
  for (const auto& t : texts) {
    const auto once = tokenize(t);
    EXPECT_EQ(tokenize(join_tokens(once)), once) << t;
  }
}

TEST(Phrases, ScoreAtThresholdIsNotMerged) {
  EXPECT_DOUBLE_EQ(phrase_score(20, 50, 30, 1000, 5), 10.0);
  EXPECT_NEAR(phrase_score(21, 50, 30, 1000, 5), 32.0 / 3.0, 1e-12);
}

// Builds a corpus with exact unigram and bigram counts: `ab` copies of "a b",
// then single tokens to reach the marginals, then filler to reach T.
static std::vector<Tokens> counted_corpus(int ab, int a, int b, int total) {
  std::vector<Tokens> seqs;
  for (int i = 0; i < ab; ++i) seqs.push_back({"a", "b"});
  for (int i = ab; i < a; ++i) seqs.push_back({"a"});
  for (int i = ab; i < b; ++i) seqs.push_back({"b"});
  const int used = a + b;
  for (int i = used; i < total; ++i) seqs.push_back({"z" + std::to_string(i % 7)});
  return seqs;
}

TEST(Phrases, StrictThresholdOnHandCounts) {
  const auto at = learn_phrases(counted_corpus(20, 50, 30, 1000));
  EXPECT_FALSE(at.contains("a", "b"));
  const auto above = learn_phrases(counted_corpus(21, 50, 30, 1000));
  EXPECT_TRUE(above.contains("a", "b"));
}

TEST(Phrases, BelowMinCountNeverMerged) {
  // Score would be huge: (4 - 5) is negative, and the count gate applies anyway.
  std::vector<Tokens> seqs(4, Tokens{"q", "r"});
  for (int i = 0; i < 10000; ++i) seqs.push_back({"f" + std::to_string(i)});
  EXPECT_FALSE(learn_phrases(seqs).contains("q", "r"));
}

TEST(Phrases, EveryStoredMergeExceedsThreshold) {
  Rng rng(5);
  std::vector<Tokens> seqs;
  for (int i = 0; i < 3000; ++i) {
    Tokens s;
    for (int j = 0; j < 8; ++j) s.push_back("w" + std::to_string(rng.next() % 40));
    if (i % 3 == 0) s.insert(s.begin() + 2, {"new", "york", "city"});
    seqs.push_back(s);
  }
  const auto m = learn_phrases(seqs);
  ASSERT_FALSE(m.empty());
  for (const auto& [pair, score] : m.merges()) EXPECT_GT(score, m.params().threshold);
  EXPECT_EQ(apply_phrases({"new", "york", "city"}, m), (Tokens{"new_york_city"}));
}

TEST(Phrases, TwoPassGreedyTrigram) {
  PhraseModel m;
  m.add("new", "york", 20);
  m.add("new_york", "city", 20);
  EXPECT_EQ(apply_phrases({"new", "york", "city"}, m), (Tokens{"new_york_city"}));
}

TEST(Phrases, NoModeledPairsUnchanged) {
  PhraseModel m;
  m.add("x", "y", 20);
  const Tokens t = {"a", "b", "c"};
  EXPECT_EQ(apply_phrases(t, m), t);
}

TEST(Phrases, LeftmostFirst) {
  PhraseModel m;
  m.add("b", "b", 20);
  m.add("a", "b", 20);
  EXPECT_EQ(apply_phrases({"a", "b", "b"}, m), (Tokens{"a_b", "b"}));
}

TEST(Phrases, MergesPreserveTokenMultiset) {
  Rng rng(9);
  PhraseModel m;
  for (int i = 0; i < 6; ++i) m.add("w" + std::to_string(i), "w" + std::to_string(i + 1), 20);
  for (int trial = 0; trial < 200; ++trial) {
    Tokens t;
    for (int j = 0; j < 12; ++j) t.push_back("w" + std::to_string(rng.next() % 8));
    const auto out = apply_phrases(t, m);
    EXPECT_LE(out.size(), t.size());
    Tokens parts;
    for (const auto& o : out) {
      std::size_t start = 0, pos;
      while ((pos = o.find('_', start)) != std::string::npos) {
        parts.push_back(o.substr(start, pos - start));
        start = pos + 1;
      }
      parts.push_back(o.substr(start));
    }
    auto a = t, b = parts;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
}

TEST(Phrases, SaveLoadRoundTrip) {
  testsupport::TempDir dir("phr");
  PhraseModel m;
  m.add("new", "york", 12.5);
  m.add("new_york", "city", 30.25);
  save_phrases(dir / "p.txt", m);
  const auto back = load_phrases(dir / "p.txt");
  EXPECT_EQ(back.merges(), m.merges());
  EXPECT_EQ(back.params().passes, m.params().passes);
}

static void write_lines(const std::filesystem::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

TEST(Ingest, ValidFileGroupsByUser) {
  testsupport::TempDir dir("ing");
  write_lines(dir / "a.jsonl", {R"({"user_id":"u1","timestamp":10,"text":"hello"})",
                                R"({"user_id":"u2","timestamp":11,"text":"hi there"})",
                                R"({"user_id":"u1","timestamp":12,"text":"again"})"});
  IngestReport rep;
  const auto s = ingest_posts(dir / "a.jsonl", {}, &rep);
  EXPECT_EQ(rep.skipped, 0u);
  EXPECT_EQ(s.user_count(), 2u);
  EXPECT_EQ(s.users()[0].user_id, "u1");
  EXPECT_EQ(s.users()[0].posts.size(), 2u);
  EXPECT_EQ(s.users()[1].posts.size(), 1u);
}

TEST(Ingest, MissingTextSkipped) {
  testsupport::TempDir dir("ing");
  write_lines(dir / "a.jsonl", {R"({"user_id":"u1","timestamp":10,"text":"hello"})",
                                R"({"user_id":"u1","timestamp":11})", R"(not json)"});
  IngestReport rep;
  const auto s = ingest_posts(dir / "a.jsonl", {}, &rep);
  EXPECT_EQ(rep.skipped, 2u);
  EXPECT_EQ(s.post_count(), 1u);
  EXPECT_FALSE(rep.warnings.empty());
}

TEST(Ingest, PostsSortedAscendingPerUser) {
  testsupport::TempDir dir("ing");
  const std::vector<std::pair<std::string, long>> raw = {{"b", 40}, {"a", 30}, {"b", 5}, {"a", 7}};
  std::vector<std::string> lines;
  for (const auto& [u, t] : raw)
    lines.push_back(R"({"user_id":")" + u + R"(","timestamp":)" + std::to_string(t) + R"(,"text":"x"})");
  write_lines(dir / "a.jsonl", lines);
  const auto s = ingest_posts(dir / "a.jsonl");
  for (const auto& u : s.users()) {
    std::vector<long> ts, expected;
    for (const auto& p : u.posts) ts.push_back(p.timestamp);
    for (const auto& [uu, t] : raw)
      if (uu == u.user_id) expected.push_back(t);
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(ts, expected);
  }
}

TEST(Ingest, SchemaMappingAndIsoTimestamps) {
  testsupport::TempDir dir("ing");
  write_lines(dir / "a.jsonl", {R"({"author":"u","created":"2020-03-01T00:00:00Z","body":"x","y":1})"});
  PostSchema schema{"author", "created", "body", "y", "sub"};
  const auto s = ingest_posts(dir / "a.jsonl", schema);
  ASSERT_EQ(s.post_count(), 1u);
  EXPECT_EQ(s.users()[0].posts[0].timestamp, *parse_utc("2020-03-01T00:00:00Z"));
  EXPECT_EQ(s.users()[0].label, 1);
}

TEST(Ingest, UnreadableFileIsFatal) { EXPECT_THROW(ingest_posts("/nonexistent/posts.jsonl"), Error); }

TEST(Ingest, WriteThenReadRoundTrip) {
  testsupport::TempDir dir("ing");
  const auto s = PostStore::from_posts({post("u1", 5, "a b", 1, "c1"), post("u2", 3, "c, d", 0)});
  write_posts(dir / "o.jsonl", s);
  const auto back = ingest_posts(dir / "o.jsonl");
  ASSERT_EQ(back.post_count(), 2u);
  EXPECT_EQ(back.users()[0].posts[0].community, "c1");
  EXPECT_EQ(back.users()[1].posts[0].text, "c, d");
}

TEST(Filter, EmptyFilterIsIdentity) {
  const auto s = PostStore::from_posts({post("u1", 1, "a"), post("u2", 2, "b")});
  const auto out = filter_posts(s, {});
  EXPECT_EQ(out.post_count(), s.post_count());
}

TEST(Filter, TermBlocklistRemovesPost) {
  const auto s = PostStore::from_posts({post("u1", 1, "feeling depression today"), post("u1", 2, "fine day")});
  FilterSet f;
  f.blocked_terms = {"depression"};
  FilterReport r;
  const auto out = filter_posts(s, f, &r);
  EXPECT_EQ(out.post_count(), 1u);
  EXPECT_EQ(r.removed["terms"], 1u);
}

TEST(Filter, CommunityBlocklistCounts) {
  std::vector<Post> posts;
  for (int i = 0; i < 10; ++i) posts.push_back(post("u" + std::to_string(i % 3), i, "x", std::nullopt, i < 3 ? "bad" : "ok"));
  FilterSet f;
  f.blocked_communities = {"bad"};
  FilterReport r;
  const auto out = filter_posts(PostStore::from_posts(posts), f, &r);
  EXPECT_EQ(out.post_count(), 7u);
  EXPECT_EQ(r.removed["community"], 3u);
  EXPECT_EQ(r.kept, 7u);
}

TEST(Filter, PhrasedTermAndCustomHook) {
  PhraseModel m;
  m.add("mental", "health", 50);
  const auto s = PostStore::from_posts({post("u", 1, "mental health day"), post("u", 2, "mental gym"), post("u", 3, "skip me")});
  FilterSet f;
  f.blocked_terms = {"mental_health"};
  f.phrases = &m;
  f.custom = [](const Post& p) { return p.text.rfind("skip", 0) == 0; };
  FilterReport r;
  const auto out = filter_posts(s, f, &r);
  EXPECT_EQ(out.post_count(), 1u);
  EXPECT_EQ(r.removed["terms"], 1u);
  EXPECT_EQ(r.removed["custom"], 1u);
}

static std::vector<Period> two_periods() { return {{"A", 0, 100}, {"B", 100, 200}}; }

TEST(Slicing, BelowMinPostsExcluded) {
  std::vector<Post> posts;
  for (int i = 0; i < 150; ++i) posts.push_back(post("u", i % 100, "a"));
  auto v = testsupport::vocab_of({"a"}, {150});
  const auto sm = slice_and_aggregate(PostStore::from_posts(posts), {{"A", 0, 100}}, 200, v);
  EXPECT_EQ(sm.matrices[0].rows(), 0u);
}

TEST(Slicing, RowCountsOneUser) {
  auto v = testsupport::vocab_of({"a", "b", "c"}, {1, 2, 1});
  const auto sm = slice_and_aggregate(PostStore::from_posts({post("u", 1, "a b"), post("u", 2, "b c")}), {{"A", 0, 10}}, 1, v);
  const auto& m = sm.matrices[0];
  ASSERT_EQ(m.rows(), 1u);
  std::map<std::string, std::uint32_t> got;
  for (const auto& e : m.row(0)) got[v->term(e.col)] = e.count;
  EXPECT_EQ(got, (std::map<std::string, std::uint32_t>{{"a", 1}, {"b", 2}, {"c", 1}}));
}

TEST(Slicing, UserInOnePeriodOnly) {
  auto v = testsupport::vocab_of({"a"}, {2});
  const auto sm = slice_and_aggregate(PostStore::from_posts({post("u", 10, "a"), post("w", 150, "a")}), two_periods(), 1, v);
  EXPECT_EQ(sm.matrices[0].row_ids(), (std::vector<std::string>{"u"}));
  EXPECT_EQ(sm.matrices[1].row_ids(), (std::vector<std::string>{"w"}));
}

TEST(Slicing, OverlappingPeriodsRejected) {
  EXPECT_THROW(slice_corpus({}, {{"A", 0, 100}, {"B", 50, 150}}), Error);
}

TEST(Slicing, PartitionAndRowSumsMatchBruteForce) {
  Rng rng(17);
  std::vector<Post> posts;
  const std::vector<std::string> words = {"alpha", "beta", "gamma", "delta", "eps"};
  for (int u = 0; u < 12; ++u)
    for (int k = 0; k < 10; ++k) {
      std::string text;
      for (int j = 0; j < 1 + static_cast<int>(rng.next() % 5); ++j) text += words[rng.next() % words.size()] + " ";
      posts.push_back(post("u" + std::to_string(u), static_cast<EpochSeconds>(rng.next() % 250), text));
    }
  const auto store = PostStore::from_posts(posts);
  auto v = testsupport::vocab_of({"alpha", "beta", "gamma"}, {1, 1, 1});
  const auto sm = slice_and_aggregate(store, two_periods(), 1, v);
  for (const auto& u : store.users()) {
    std::size_t in_union = 0;
    for (const auto& p : u.posts) in_union += p.timestamp < 200;
    std::size_t sliced = 0;
    for (const auto& s : sm.corpus.slices)
      for (const auto& us : s.users)
        if (us.user_id == u.user_id) sliced += us.post_count();
    EXPECT_EQ(sliced, in_union);
  }
  for (std::size_t pi = 0; pi < 2; ++pi) {
    const auto& m = sm.matrices[pi];
    const auto& per = two_periods()[pi];
    for (std::size_t r = 0; r < m.rows(); ++r) {
      std::uint64_t brute = 0;
      for (const auto& p : posts)
        if (p.user_id == m.row_id(r) && per.contains(p.timestamp))
          for (const auto& t : tokenize(p.text)) brute += v->contains(t);
      EXPECT_EQ(m.row_sum(r), brute);
    }
  }
}

TEST(Vocabulary, MinCountAndTruncationTieBreak) {
  TermCounts c{{"a", 10}, {"b", 10}, {"c", 10}, {"d", 4}, {"e", 20}};
  const auto v = build_vocabulary(c, 5, 3);
  EXPECT_EQ(v.terms(), (std::vector<std::string>{"e", "a", "b"}));
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(*v.find(v.term(i)), i);
}

TEST(Vocabulary, CsvAndDtmRoundTrip) {
  testsupport::TempDir dir("voc");
  auto v = testsupport::vocab_of({"x", "y", "z"}, {5, 7, 9});
  save_vocabulary_csv(dir / "v.csv", *v);
  EXPECT_EQ(load_vocabulary_csv(dir / "v.csv").terms(), v->terms());
  DocumentTermMatrix m(v);
  m.add_row("r1", {{0, 2}, {2, 1}}, 3, 1);
  m.add_row("r2", {{1, 4}}, 1, 0);
  save_dtm(dir / "m.txt", m);
  const auto back = load_dtm(dir / "m.txt", v);
  ASSERT_EQ(back.rows(), 2u);
  EXPECT_EQ(back.labels(), m.labels());
  EXPECT_EQ(back.row_sum(0), 3u);
  EXPECT_EQ(back.post_count(0), 3u);
}
