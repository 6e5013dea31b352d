#include <gtest/gtest.h>

#include <fstream>

#include "prefpipe/errors.hpp"
#include "prefpipe/funnel.hpp"
#include "prefpipe/labeling.hpp"
#include "prefpipe/pipeline.hpp"
#include "test_support.hpp"

namespace prefpipe {
namespace {

using testing::make_prompt;

TEST(MakeReportTest, ThreeStageChain) {
  const FunnelReport r =
      make_report({{"a", 100, 90, 0}, {"b", 90, 36, 0}, {"c", 36, 18, 0}});
  ASSERT_EQ(r.stages.size(), 3u);
  EXPECT_DOUBLE_EQ(r.stages[0].retention(), 0.9);
  EXPECT_DOUBLE_EQ(r.stages[1].retention(), 0.4);
  EXPECT_DOUBLE_EQ(r.stages[2].retention(), 0.5);
  ASSERT_TRUE(r.overall_retention);
  EXPECT_DOUBLE_EQ(*r.overall_retention, 0.18);
  EXPECT_NEAR(*r.overall_retention, 0.9 * 0.4 * 0.5, 1e-12);
}

TEST(MakeReportTest, SingleStageAndEmpty) {
  const FunnelReport one = make_report({{"only", 10, 7, 0}});
  EXPECT_DOUBLE_EQ(*one.overall_retention, 0.7);
  const FunnelReport none = make_report({});
  EXPECT_FALSE(none.overall_retention);
  EXPECT_NE(to_text(none).find("no data"), std::string::npos);
  EXPECT_NE(to_csv(none).find("no data"), std::string::npos);
}

TEST(MakeReportTest, BrokenChainIsAnIntegrityError) {
  EXPECT_THROW(make_report({{"a", 100, 90, 0}, {"b", 80, 40, 0}}), IntegrityError);
  EXPECT_THROW(make_report({{"a", 10, 11, 0}}), IntegrityError);
}

TEST(MakeReportTest, ZeroInputStage) {
  const FunnelReport r = make_report({{"a", 10, 0, 0}, {"b", 0, 0, 0}});
  EXPECT_EQ(*r.overall_retention, 0.0);
}

TEST(FunnelFormatTest, CsvAndText) {
  const FunnelReport r = make_report({{"s1", 100, 90, 0}, {"s2", 90, 36, 4}});
  EXPECT_EQ(to_csv(r),
            "stage,count_in,count_out,pending,retention\n"
            "s1,100,90,0,0.9\n"
            "s2,90,36,4,0.4\n"
            "overall,,,,0.36\n");
  const std::string text = to_text(r);
  EXPECT_NE(text.find("s1"), std::string::npos);
  EXPECT_NE(text.find("(4 pending)"), std::string::npos);
  EXPECT_NE(text.find("overall retention 0.360"), std::string::npos);
}

Json mock_config(int pairs_per_prompt) {
  return Json::parse(R"({
    "seed": 3,
    "clients": {
      "generators": [{"id": "sft", "type": "mock", "tier": 1},
                     {"id": "strong", "type": "mock", "tier": 3}],
      "proxies": [{"id": "proxy", "type": "mock", "favored_generator": "strong",
                   "favored_rate": 0.9, "margin": 1.0}],
      "judges": [{"id": "judge", "type": "mock", "base_score": 3,
                  "favored_generator": "strong", "favored_rate": 0.4,
                  "default_rubric": "{response}"}]
    },
    "step1": {"epsilon": 0.0, "sft_client": "sft", "strong_client": "strong",
              "proxy_client": "proxy"},
    "step2": {"generators": [{"client": "strong"}, {"client": "sft"}],
              "min_superior_tier": 3, "pairs_per_prompt": )" +
                     std::to_string(pairs_per_prompt) + R"(},
    "step3": {"judge": "judge"}
  })");
}

std::vector<Prompt> prompts(int n) {
  std::vector<Prompt> out;
  for (int i = 0; i < n; ++i) out.push_back(make_prompt("p" + std::to_string(i)));
  return out;
}

TEST(ReportFunnelTest, EmptyStoreHasNoData) {
  RecordStore store;
  const FunnelReport r = report_funnel(store);
  EXPECT_TRUE(r.stages.empty());
  EXPECT_FALSE(r.overall_retention);
}

TEST(ReportFunnelTest, StagesChainThroughHumanLabels) {
  RecordStore store;
  const PipelineConfig cfg = parse_config(mock_config(1));
  const auto src = prompts(300);
  run_pipeline(src, cfg, store);

  FunnelReport r = report_funnel(store);
  ASSERT_EQ(r.stages.size(), 2u);
  EXPECT_EQ(r.stages[0].stage_name, kStep1StageName);
  EXPECT_EQ(r.stages[0].count_in, 300u);
  EXPECT_EQ(r.stages[1].stage_name, kStep3StageName);
  EXPECT_EQ(r.stages[1].count_in, r.stages[0].count_out);

  // Label everything: alternate keep / discard.
  LabelQueue queue(store, {});
  int i = 0;
  while (auto task = queue.lease_next("ann")) {
    queue.submit(task->lease_id, "ann", i++ % 2 ? "discard" : "first");
  }
  r = report_funnel(store);
  ASSERT_EQ(r.stages.size(), 3u);
  EXPECT_EQ(r.stages[2].stage_name, kStep4StageName);
  EXPECT_EQ(r.stages[2].count_in, r.stages[1].count_out);
  EXPECT_EQ(r.stages[2].count_out, export_training_set(store).size());
  EXPECT_EQ(r.stages[2].pending, 0u);
  double product = 1.0;
  for (const auto& s : r.stages) product *= s.retention();
  EXPECT_NEAR(*r.overall_retention, product, 1e-12);
  EXPECT_DOUBLE_EQ(*r.overall_retention, r.stages.back().count_out / 300.0);
}

TEST(ReportFunnelTest, CountsAreInSampleSlots) {
  RecordStore store;
  const PipelineConfig cfg = parse_config(mock_config(2));
  run_pipeline(prompts(100), cfg, store);
  const FunnelReport r = report_funnel(store);
  ASSERT_FALSE(r.stages.empty());
  EXPECT_EQ(r.stages[0].count_in, 200u);
  EXPECT_EQ(r.stages[0].count_out % 2, 0u);
  EXPECT_LE(*r.overall_retention, 1.0);
  for (std::size_t i = 1; i < r.stages.size(); ++i) {
    EXPECT_EQ(r.stages[i].count_in, r.stages[i - 1].count_out);
  }
}

TEST(ReportFunnelTest, CorruptStoreFileNamesTheLine) {
  testing::TempDir dir;
  {
    RecordStore store(dir / "s.jsonl");
    run_pipeline(prompts(5), parse_config(mock_config(1)), store);
  }
  std::vector<std::string> lines;
  {
    std::ifstream in(dir / "s.jsonl");
    for (std::string l; std::getline(in, l);) lines.push_back(l);
  }
  ASSERT_GT(lines.size(), 4u);
  lines[3] = "{\"type\": \"prompt\", truncated";
  {
    std::ofstream out(dir / "s.jsonl");
    for (const auto& l : lines) out << l << '\n';
  }
  try {
    RecordStore reopened(dir / "s.jsonl");
    FAIL() << "corrupt store accepted";
  } catch (const IntegrityError& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace prefpipe
