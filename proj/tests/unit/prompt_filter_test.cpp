#include <gtest/gtest.h>

#include <limits>
#include <random>
#include <set>

#include "prefpipe/errors.hpp"
#include "prefpipe/prompt_filter.hpp"
#include "test_support.hpp"

namespace prefpipe {
namespace {

using testing::make_prompt;

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Step1Fixture : ::testing::Test {
  void SetUp() override {
    registry.add(std::shared_ptr<const GeneratorClient>(sft));
    registry.add(std::shared_ptr<const GeneratorClient>(strong));
    registry.add(std::shared_ptr<const ProxyRewardClient>(proxy));
    config.sft_client_id = "sft";
    config.strong_client_id = "strong";
    config.proxy_client_id = "proxy";
  }

  // Strong responses score 1.0 except on the listed prompts; SFT scores 0.
  void strong_wins_except(std::set<std::string> losers) {
    proxy->set_function([losers](const Prompt& p, const Response& r) {
      if (r.generator_id != "strong") return 0.0;
      return losers.count(p.id) ? 0.0 : 1.0;
    });
  }

  std::vector<Prompt> pool(int n) {
    std::vector<Prompt> out;
    for (int i = 0; i < n; ++i) out.push_back(make_prompt("p" + std::to_string(i)));
    return out;
  }

  std::shared_ptr<MockGenerator> sft = std::make_shared<MockGenerator>("sft", 1);
  std::shared_ptr<MockGenerator> strong = std::make_shared<MockGenerator>("strong", 3);
  std::shared_ptr<MockProxyReward> proxy = std::make_shared<MockProxyReward>("proxy");
  ClientRegistry registry;
  PromptFilterConfig config;
  RecordStore store;
};

// Keep rule ----------------------------------------------------------------

TEST(KeepRuleTest, ClearMarginIsKept) {
  const PromptVerdict v = make_verdict("p", 2.0, 1.0, 0.5);
  EXPECT_DOUBLE_EQ(v.delta, 1.0);
  EXPECT_TRUE(v.kept);
}

TEST(KeepRuleTest, DeltaEqualToEpsilonIsDropped) {
  EXPECT_FALSE(make_verdict("p", 1.0, 1.0, 0.0).kept);
  EXPECT_FALSE(keep_prompt(1.5, 1.0, 0.5));
}

TEST(KeepRuleTest, NegativeDeltaIsDropped) {
  const PromptVerdict v = make_verdict("p", 0.4, 1.0, 0.0);
  EXPECT_DOUBLE_EQ(v.delta, 0.4 - 1.0);
  EXPECT_FALSE(v.kept);
}

TEST(KeepRuleTest, InfiniteThresholds) {
  EXPECT_FALSE(keep_prompt(1e300, -1e300, kInf));
  EXPECT_TRUE(keep_prompt(-1e300, 1e300, -kInf));
}

// Scores on a dyadic grid so that adding a shift is exact in binary floating
// point; the rule is then checked against exact arithmetic.
TEST(KeepRuleTest, MonotoneInEpsilonAndShiftInvariant) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> grid(-4096, 4096);
  auto draw = [&] { return grid(rng) / 64.0; };
  for (int i = 0; i < 1000; ++i) {
    const double strong = draw(), sft = draw(), c = draw();
    double e1 = draw(), e2 = draw();
    if (e1 > e2) std::swap(e1, e2);
    // Oracle: exact integer comparison on the grid.
    const long long ds = std::llround(strong * 64) - std::llround(sft * 64);
    EXPECT_EQ(keep_prompt(strong, sft, e1), ds > std::llround(e1 * 64));
    if (keep_prompt(strong, sft, e2)) EXPECT_TRUE(keep_prompt(strong, sft, e1));
    EXPECT_EQ(keep_prompt(strong + c, sft + c, e1), keep_prompt(strong, sft, e1));
    // The boundary itself drops.
    EXPECT_FALSE(keep_prompt(sft + e1, sft, e1));
  }
}

// Pool sampling ------------------------------------------------------------

std::vector<Prompt> ten_prompt_fixture() {
  std::vector<Prompt> out;
  for (int i = 0; i < 3; ++i) out.push_back(make_prompt("m" + std::to_string(i), "math"));
  for (int i = 0; i < 4; ++i) out.push_back(make_prompt("c" + std::to_string(i), "chat"));
  for (int i = 0; i < 3; ++i) out.push_back(make_prompt("w" + std::to_string(i), "writing"));
  return out;
}

TEST(SamplePoolTest, QuotaPerCategory) {
  const auto source = ten_prompt_fixture();
  const PoolSample s = sample_pool(source, {{"math", 2}, {"chat", 2}}, 1);
  ASSERT_EQ(s.prompts.size(), 4u);
  std::map<std::string, int> per;
  std::set<std::string> ids;
  for (const auto& p : s.prompts) {
    ++per[p.category];
    ids.insert(p.id);
  }
  EXPECT_EQ(per["math"], 2);
  EXPECT_EQ(per["chat"], 2);
  EXPECT_EQ(ids.size(), 4u);
  EXPECT_TRUE(s.warnings.empty());
}

TEST(SamplePoolTest, QuotaAboveAvailabilityTakesAllAndWarns) {
  const auto source = ten_prompt_fixture();
  const PoolSample s = sample_pool(source, {{"math", 5}}, 1);
  EXPECT_EQ(s.prompts.size(), 3u);
  ASSERT_EQ(s.warnings.size(), 1u);
  EXPECT_NE(s.warnings[0].find("math"), std::string::npos);
}

TEST(SamplePoolTest, SameSeedSameSample) {
  const auto source = ten_prompt_fixture();
  const auto a = sample_pool(source, {{"chat", 2}, {"writing", 1}}, 77).prompts;
  const auto b = sample_pool(source, {{"chat", 2}, {"writing", 1}}, 77).prompts;
  EXPECT_EQ(a, b);
}

TEST(SamplePoolTest, EmptySourceAndUnknownCategoryAreErrors) {
  EXPECT_THROW(sample_pool({}, {}, 0), ValidationError);
  const auto source = ten_prompt_fixture();
  try {
    sample_pool(source, {{"poetry", 1}, {"math", 1}, {"legal", 2}}, 0);
    FAIL() << "unknown category accepted";
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("poetry"), std::string::npos);
    EXPECT_NE(msg.find("legal"), std::string::npos);
  }
}

TEST(SamplePoolTest, SamplingIsRoughlyUniform) {
  std::vector<Prompt> source;
  for (int i = 0; i < 10; ++i) source.push_back(make_prompt("c" + std::to_string(i), "chat"));
  std::map<std::string, int> hits;
  const int trials = 4000;
  for (int s = 0; s < trials; ++s) {
    for (const auto& p : sample_pool(source, {{"chat", 3}}, s).prompts) ++hits[p.id];
  }
  // Each prompt is picked with probability 0.3: mean 1200, sd ~29.
  for (const auto& [id, n] : hits) EXPECT_NEAR(n, 1200, 150) << id;
}

// Step 1 -------------------------------------------------------------------

TEST_F(Step1Fixture, NineOfTenKept) {
  strong_wins_except({"p4"});
  const auto r = run_step1(pool(10), config, registry, store);
  EXPECT_EQ(r.kept.size(), 9u);
  EXPECT_DOUBLE_EQ(r.stage.retention(), 0.9);
  EXPECT_EQ(r.stage.count_in, 10u);
  for (const auto& p : r.kept) EXPECT_NE(p.id, "p4");
}

TEST_F(Step1Fixture, InfiniteEpsilonKeepsNothingNegativeKeepsAll) {
  strong_wins_except({"p1", "p2"});
  config.epsilon = kInf;
  EXPECT_TRUE(run_step1(pool(10), config, registry, store).kept.empty());
  RecordStore other;
  config.epsilon = -kInf;
  EXPECT_EQ(run_step1(pool(10), config, registry, other).kept.size(), 10u);
}

TEST_F(Step1Fixture, VerdictsArePersistedWithBothResponses) {
  strong_wins_except({});
  const auto r = run_step1(pool(3), config, registry, store);
  const auto stored = stored_verdicts(store);
  ASSERT_EQ(stored.size(), 3u);
  for (const auto& v : stored) {
    EXPECT_EQ(v.response_strong.generator_id, "strong");
    EXPECT_EQ(v.response_sft.generator_id, "sft");
    EXPECT_FALSE(v.response_strong.text.empty());
    EXPECT_TRUE(store.has_prompt(v.prompt_id));
  }
}

TEST_F(Step1Fixture, StoredVerdictsAgreeWithIndependentRecheck) {
  proxy->set_noise(2.0);
  proxy->set_favored({"strong", 0.5, 3}, 0.7);
  config.epsilon = 0.3;
  run_step1(pool(200), config, registry, store);
  for (const auto& v : stored_verdicts(store)) {
    EXPECT_EQ(v.delta, v.score_strong - v.score_sft);
    EXPECT_EQ(v.kept, v.score_strong - v.score_sft > 0.3) << v.prompt_id;
  }
}

TEST_F(Step1Fixture, ClientFailureDefersInsteadOfDropping) {
  strong_wins_except({});
  strong->set_failing_prompts({"p2", "p5"});
  const auto r = run_step1(pool(8), config, registry, store);
  EXPECT_EQ(r.deferred, (std::vector<std::string>{"p2", "p5"}));
  EXPECT_EQ(r.deferred_reasons.size(), 2u);
  EXPECT_EQ(r.kept.size(), 6u);
  EXPECT_EQ(r.stage.pending, 2u);
  EXPECT_EQ(stored_verdicts(store).size(), 6u);

  // Backend recovers; a rerun only processes the deferred prompts.
  strong->set_failing_prompts({});
  const auto before = registry.log().size();
  const auto again = run_step1(pool(8), config, registry, store);
  EXPECT_TRUE(again.deferred.empty());
  EXPECT_EQ(again.kept.size(), 8u);
  EXPECT_EQ(registry.log().size() - before, 2u * 4u);  // 2 prompts x (2 generations + 2 scores)
  EXPECT_EQ(stored_verdicts(store).size(), 8u);
}

TEST_F(Step1Fixture, EmptyPoolAndBadConfigAreRejected) {
  EXPECT_THROW(run_step1({}, config, registry, store), ValidationError);
  config.proxy_client_id = "missing";
  EXPECT_THROW(run_step1(pool(2), config, registry, store), ConfigError);
  config.proxy_client_id = "proxy";
  config.epsilon = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(run_step1(pool(2), config, registry, store), ConfigError);
  config.epsilon = 0;
  config.per_category_quota = {{"chat", 0}};
  EXPECT_THROW(config.validate(registry), ConfigError);
}

TEST_F(Step1Fixture, DeterministicAcrossRuns) {
  proxy->set_noise(1.0);
  config.seed = 5;
  RecordStore a, b;
  run_step1(pool(30), config, registry, a);
  run_step1(pool(30), config, registry, b);
  EXPECT_EQ(a.materialized(), b.materialized());
}

}  // namespace
}  // namespace prefpipe
