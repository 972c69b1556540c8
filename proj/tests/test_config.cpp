#include <gtest/gtest.h>

#include "support.hpp"

using namespace semstab;
using nlohmann::json;

static std::string error_of(const json& j) {
  try {
    run_config_from_json(j);
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

TEST(Config, EmptyObjectKeepsDefaults) {
  const auto c = run_config_from_json(json::object());
  EXPECT_EQ(c.params.stability.k, 500u);
  EXPECT_EQ(c.params.embed.dim, 100u);
  EXPECT_EQ(c.params.cv.grid, kDefaultCGrid);
  EXPECT_EQ(c.params.methods.size(), 8u);
  EXPECT_EQ(c.min_posts, 200u);
}

TEST(Config, DefaultsAuditAllMatch) {
  for (const auto& d : defaults_audit(RunConfig{})) EXPECT_TRUE(d.ok()) << d.name;
  RunConfig c;
  c.params.stability.k = 100;
  const auto audit = defaults_audit(c);
  const auto it = std::find_if(audit.begin(), audit.end(), [](const auto& d) { return d.name == "shift.k"; });
  ASSERT_NE(it, audit.end());
  EXPECT_FALSE(it->ok());
}

TEST(Config, UnknownKeysRejectedWithName) {
  EXPECT_NE(error_of({{"sed", 3}}).find("'sed'"), std::string::npos);
  EXPECT_NE(error_of({{"shift", {{"kk", 3}}}}).find("kk"), std::string::npos);
  EXPECT_NE(error_of({{"paths", {{"nowhere", "x"}}}}).find("nowhere"), std::string::npos);
  EXPECT_NE(error_of({{"corpus", {{"schema", {{"userid", "u"}}}}}}).find("userid"), std::string::npos);
}

TEST(Config, InvalidValuesRejected) {
  EXPECT_FALSE(error_of({{"workers", 0}}).empty());
  EXPECT_FALSE(error_of({{"model", {{"folds", 1}}}}).empty());
  EXPECT_FALSE(error_of({{"model", {{"c_grid", {1.0, -1.0}}}}}).empty());
  EXPECT_FALSE(error_of({{"select", {{"percentiles", {0, 50}}}}}).empty());
  EXPECT_FALSE(error_of({{"select", {{"methods", {"nope"}}}}}).empty());
  EXPECT_FALSE(error_of({{"shift", {{"k", 0}}}}).empty());
  EXPECT_NE(error_of({{"seed", "seven"}}).find("'seed'"), std::string::npos);
  EXPECT_FALSE(error_of({{"select", {{"methods", 3}}}}).empty());
  EXPECT_FALSE(error_of({{"corpus", {{"periods", {{{"name", "x"}, {"start", 5}}}}}}}).empty());
  EXPECT_FALSE(error_of(json::array()).empty());
}

TEST(Config, OverridesReachPlan) {
  const json j = {{"seed", 42},
                  {"workers", 3},
                  {"corpus", {{"min_posts", 100}}},
                  {"shift", {{"k", 50}, {"cf_nb", 20}}},
                  {"select", {{"methods", {"cumulative", "overlap"}}, {"percentiles", {25, 75}}}},
                  {"harness", {{"outer_repeats", 2}, {"unlabeled_sample", 0.5}}}};
  const auto c = run_config_from_json(j);
  EXPECT_EQ(c.plan.seed, 42u);
  EXPECT_EQ(c.plan.workers, 3u);
  EXPECT_EQ(c.plan.min_posts, 100u);
  EXPECT_EQ(c.plan.params.stability.k, 50u);
  EXPECT_EQ(c.plan.params.stability.cf_nb, 20u);
  EXPECT_EQ(c.plan.params.methods, (std::vector<Method>{Method::Cumulative, Method::Overlap}));
  EXPECT_EQ(c.plan.params.percentiles, (std::vector<int>{25, 75}));
  EXPECT_EQ(c.plan.outer_repeats, 2u);
  EXPECT_EQ(c.plan.unlabeled_sample, 0.5);
}

TEST(Config, JsonRoundTrip) {
  json j = {{"seed", 7},
            {"corpus", {{"periods", {{{"name", "pre"}, {"start", "2019-03-01"}, {"end", "2019-07-01"}}}}}},
            {"embed", {{"dim", 32}, {"epochs", 3}}},
            {"synth", {{"vocab_size", 500}, {"overlap", 0.5}}}};
  const auto c = run_config_from_json(j);
  ASSERT_EQ(c.periods.size(), 1u);
  EXPECT_EQ(c.periods[0].start, *parse_utc("2019-03-01"));
  const auto once = to_json(c);
  EXPECT_EQ(to_json(run_config_from_json(once)), once);
}

TEST(Config, LoadRejectsMalformedFile) {
  testsupport::TempDir dir("config");
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_run_config(dir / "bad.json"), Error);
  EXPECT_THROW(load_run_config(dir / "missing.json"), Error);
  std::ofstream(dir / "ok.json") << R"({"seed": 5})";
  EXPECT_EQ(load_run_config(dir / "ok.json").seed, 5u);
}
