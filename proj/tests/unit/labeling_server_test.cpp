#include <gtest/gtest.h>

#include <httplib.h>

#include <fstream>
#include <set>
#include <thread>

#include "prefpipe/errors.hpp"
#include "prefpipe/labeling.hpp"
#include "prefpipe/labeling_server.hpp"
#include "test_support.hpp"

namespace prefpipe {
namespace {

using testing::make_prompt;
using testing::make_triad;
using testing::TempDir;

void seed_filter_kept(RecordStore& store, int n) {
  for (int i = 0; i < n; ++i) {
    const std::string pid = "p" + std::to_string(i);
    store.append(make_prompt(pid));
    const auto id = store.append(make_triad(pid, "a" + std::to_string(i), "b" + std::to_string(i)));
    store.advance_stage(id, Stage::kJudgeScored, {4, 3, {}, {}, {}});
    store.advance_stage(id, Stage::kFilterKept, {{}, {}, {}, Side::kA, {}});
  }
}

// Runs a LabelingServer on an ephemeral port for the test's lifetime.
class ServerHarness {
 public:
  ServerHarness(RecordStore& store, ServerConfig cfg, LabelingConfig lcfg = {},
                LabelQueue::Clock clock = [] { return std::chrono::system_clock::now(); })
      : queue_(store, lcfg, std::move(clock)), server_(queue_, store, std::move(cfg)) {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~ServerHarness() {
    server_.stop();
    thread_.join();
  }

  httplib::Client client(const std::string& token = "") const {
    httplib::Client c("127.0.0.1", port_);
    if (!token.empty()) c.set_bearer_token_auth(token);
    return c;
  }
  LabelQueue& queue() { return queue_; }

 private:
  LabelQueue queue_;
  LabelingServer server_;
  int port_ = 0;
  std::thread thread_;
};

ServerConfig tokens() {
  ServerConfig cfg;
  cfg.tokens = {{"tok-alice", "alice"}, {"tok-bob", "bob"}};
  return cfg;
}

Json body_of(const httplib::Result& r) { return Json::parse(r->body); }

TEST(LabelingServerTest, RequiresBearerToken) {
  RecordStore store;
  ServerHarness h(store, tokens());
  auto anon = h.client();
  auto r = anon.Get("/api/tasks/next");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 401);
  auto wrong = h.client("tok-eve");
  EXPECT_EQ(wrong.Get("/api/progress")->status, 401);
}

TEST(LabelingServerTest, LeaseSubmitRoundTrip) {
  RecordStore store;
  seed_filter_kept(store, 2);
  ServerHarness h(store, tokens());
  auto alice = h.client("tok-alice");

  auto r = alice.Get("/api/tasks/next");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200);
  const Json task = body_of(r)["task"];
  ASSERT_TRUE(task.is_object());
  for (const char* key : {"triad_id", "lease_id", "lease_expiry", "presented_order", "prompt",
                          "first", "second", "category"}) {
    EXPECT_TRUE(task.contains(key)) << key;
  }
  EXPECT_FALSE(task.contains("first_judge_score"));

  const Json verdict{{"lease_id", task["lease_id"]}, {"decision", "first"}, {"note", "clear"}};
  r = alice.Post("/api/verdicts", verdict.dump(), "application/json");
  ASSERT_TRUE(r);
  ASSERT_EQ(r->status, 200) << r->body;
  const Json out = body_of(r);
  EXPECT_EQ(out["stage"], "HumanKept");
  EXPECT_EQ(out["chosen"], task["presented_order"] == "BA" ? "B" : "A");

  // Same lease again -> conflict.
  r = alice.Post("/api/verdicts", verdict.dump(), "application/json");
  EXPECT_EQ(r->status, 409);

  const auto ev = store.events_of_type("verdict");
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0]["annotator_id"], "alice");
  EXPECT_EQ(ev[0]["note"], "clear");
}

TEST(LabelingServerTest, EmptyQueueReturnsNullTask) {
  RecordStore store;
  ServerHarness h(store, tokens());
  auto r = h.client("tok-bob").Get("/api/tasks/next");
  ASSERT_EQ(r->status, 200);
  EXPECT_TRUE(body_of(r)["task"].is_null());
}

TEST(LabelingServerTest, ErrorStatusMapping) {
  RecordStore store;
  seed_filter_kept(store, 1);
  auto now = std::make_shared<std::atomic<std::int64_t>>(1'000'000);
  ServerHarness h(store, tokens(), {},
                  [now] { return TimePoint(std::chrono::seconds(now->load())); });
  auto alice = h.client("tok-alice");
  auto bob = h.client("tok-bob");

  auto r = alice.Post("/api/verdicts", R"({"lease_id": "lease-unknown", "decision": "tie"})",
                      "application/json");
  EXPECT_EQ(r->status, 404);
  r = alice.Post("/api/verdicts", "not json", "application/json");
  EXPECT_EQ(r->status, 400);
  r = alice.Post("/api/verdicts", R"({"decision": "tie"})", "application/json");
  EXPECT_EQ(r->status, 400);

  const Json task = body_of(alice.Get("/api/tasks/next"))["task"];
  const std::string lease = task["lease_id"];
  r = alice.Post("/api/verdicts", Json{{"lease_id", lease}, {"decision", "A"}}.dump(),
                 "application/json");
  EXPECT_EQ(r->status, 400);
  r = bob.Post("/api/verdicts", Json{{"lease_id", lease}, {"decision", "tie"}}.dump(),
               "application/json");
  EXPECT_EQ(r->status, 404);

  *now += 601;
  r = alice.Post("/api/verdicts", Json{{"lease_id", lease}, {"decision", "tie"}}.dump(),
                 "application/json");
  EXPECT_EQ(r->status, 410);
  // Back in the queue for anyone.
  EXPECT_TRUE(body_of(bob.Get("/api/tasks/next"))["task"].is_object());
}

TEST(LabelingServerTest, RenewProgressAndFunnel) {
  RecordStore store;
  seed_filter_kept(store, 3);
  ServerHarness h(store, tokens());
  auto alice = h.client("tok-alice");
  const Json task = body_of(alice.Get("/api/tasks/next"))["task"];
  auto r = alice.Post("/api/leases/renew", Json{{"lease_id", task["lease_id"]}}.dump(),
                      "application/json");
  ASSERT_EQ(r->status, 200) << r->body;
  EXPECT_GT(body_of(r)["task"]["lease_expiry_unix"].get<double>(),
            task["lease_expiry_unix"].get<double>() - 1);
  r = alice.Post("/api/leases/renew", Json{{"lease_id", task["lease_id"]}}.dump(),
                 "application/json");
  EXPECT_EQ(r->status, 409);

  alice.Post("/api/verdicts", Json{{"lease_id", task["lease_id"]}, {"decision", "discard"}}.dump(),
             "application/json");
  const Json progress = body_of(alice.Get("/api/progress"));
  EXPECT_EQ(progress, (Json{{"pending", 2}, {"leased", 0}, {"kept", 0}, {"dropped", 1}}));

  const Json funnel = body_of(alice.Get("/api/funnel"));
  ASSERT_TRUE(funnel.contains("stage_counts"));
  ASSERT_FALSE(funnel["stage_counts"].empty());
  EXPECT_EQ(funnel["stage_counts"].back()["stage_name"], "step4_human_label");
  EXPECT_EQ(funnel["stage_counts"].back()["pending"], 2);
}

TEST(LabelingServerTest, AnyTokenIsAnAnnotatorWhenNoMapIsConfigured) {
  RecordStore store;
  seed_filter_kept(store, 1);
  ServerHarness h(store, {});
  auto r = h.client("carol").Get("/api/tasks/next");
  ASSERT_EQ(r->status, 200);
  const Json task = body_of(r)["task"];
  h.client("carol").Post("/api/verdicts",
                         Json{{"lease_id", task["lease_id"]}, {"decision", "prefer_a"}}.dump(),
                         "application/json");
  EXPECT_EQ(store.events_of_type("verdict")[0]["annotator_id"], "carol");
}

TEST(LabelingServerTest, ServesTheUiBundle) {
  TempDir dir;
  std::ofstream(dir / "index.html") << "<html>annotate</html>";
  RecordStore store;
  ServerConfig cfg = tokens();
  cfg.ui_dir = dir.path();
  ServerHarness h(store, cfg);
  auto r = h.client().Get("/index.html");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 200);
  EXPECT_EQ(r->body, "<html>annotate</html>");
}

TEST(LabelingServerTest, ConcurrentSessionsOverHttp) {
  RecordStore store;
  seed_filter_kept(store, 60);
  ServerHarness h(store, {});
  std::mutex mu;
  std::multiset<std::string> served;
  std::vector<std::thread> workers;
  for (int w = 0; w < 8; ++w) {
    workers.emplace_back([&, w] {
      auto c = h.client("annotator-" + std::to_string(w));
      for (;;) {
        auto r = c.Get("/api/tasks/next");
        ASSERT_TRUE(r);
        const Json task = Json::parse(r->body)["task"];
        if (task.is_null()) return;
        {
          std::lock_guard lock(mu);
          served.insert(task["triad_id"].get<std::string>());
        }
        auto v = c.Post("/api/verdicts",
                        Json{{"lease_id", task["lease_id"]}, {"decision", "second"}}.dump(),
                        "application/json");
        ASSERT_TRUE(v);
        ASSERT_EQ(v->status, 200);
      }
    });
  }
  for (auto& t : workers) t.join();
  EXPECT_EQ(served.size(), 60u);
  EXPECT_EQ(std::set<std::string>(served.begin(), served.end()).size(), 60u);
  EXPECT_EQ(export_training_set(store).size(), 60u);
}

}  // namespace
}  // namespace prefpipe
