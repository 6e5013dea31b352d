#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prefpipe/types.hpp"

namespace prefpipe {

// One backend call, kept for the audit trail.
struct CallRecord {
  std::string client_id;
  std::string role;  // "generate" | "proxy_score" | "judge"
  std::uint64_t input_hash = 0;
  std::string output;
  std::int64_t latency_us = 0;
  bool ok = true;
  std::string error;
};

// Thread-safe sink for CallRecords.
class CallLog {
 public:
  void record(CallRecord r);
  std::vector<CallRecord> records() const;
  std::size_t size() const;
  Json to_json() const;

 private:
  mutable std::mutex mu_;
  std::vector<CallRecord> records_;
};

// ---------------------------------------------------------------------------
// Role interfaces. Implementations only talk to their backend; the free
// functions below enforce the role contracts and do the audit logging.

class GeneratorClient {
 public:
  GeneratorClient(std::string id, int capability_tier)
      : id_(std::move(id)), tier_(capability_tier) {}
  virtual ~GeneratorClient() = default;

  const std::string& id() const { return id_; }
  // Higher means a stronger model.
  int capability_tier() const { return tier_; }

  virtual std::string generate_text(const Prompt& prompt, const GenConfig& config,
                                    std::uint64_t seed) const = 0;

 private:
  std::string id_;
  int tier_;
};

class ProxyRewardClient {
 public:
  explicit ProxyRewardClient(std::string id) : id_(std::move(id)) {}
  virtual ~ProxyRewardClient() = default;

  const std::string& id() const { return id_; }
  virtual double raw_score(const Prompt& prompt, const Response& response) const = 0;

 private:
  std::string id_;
};

// Category -> rubric template. Templates may contain {prompt}, {response}
// and {category} placeholders.
struct RubricSet {
  std::map<std::string, std::string> by_category;
  std::optional<std::string> fallback;

  // Throws ConfigError when neither a category rubric nor a fallback exists.
  const std::string& resolve(const std::string& category) const;
};

std::string render_rubric(const std::string& tmpl, const Prompt& prompt,
                          const Response& response);

struct JudgeReply {
  std::string text;
  std::optional<double> score;
};

class JudgeClient {
 public:
  JudgeClient(std::string id, RubricSet rubrics)
      : id_(std::move(id)), rubrics_(std::move(rubrics)) {}
  virtual ~JudgeClient() = default;

  const std::string& id() const { return id_; }
  const RubricSet& rubrics() const { return rubrics_; }

  // rendered_rubric is the category template with placeholders filled.
  virtual JudgeReply ask(const std::string& rendered_rubric, const Prompt& prompt,
                         const Response& response) const = 0;

 private:
  std::string id_;
  RubricSet rubrics_;
};

struct JudgeScore {
  int score = 0;
  std::string rubric;  // template that was used, unrendered
  std::string raw_reply;
};

// Role contracts ------------------------------------------------------------

// Response stamped with the client's id and the config used.
Response generate(const GeneratorClient& client, const Prompt& prompt,
                  const GenConfig& config, std::uint64_t seed,
                  CallLog* log = nullptr);

// Throws NumericError when the backend hands back NaN or infinity.
double proxy_score(const ProxyRewardClient& client, const Prompt& prompt,
                   const Response& response, CallLog* log = nullptr);

// Integer in [1,5] or an exception: ConfigError (no rubric), ScoringError
// (reply unusable).
JudgeScore judge_score(const JudgeClient& client, const Prompt& prompt,
                       const Response& response, CallLog* log = nullptr);

// First standalone integer in the reply must lie in [1,5]; anything else is
// a ScoringError. No clamping.
int parse_judge_reply(std::string_view reply);

// Mocks ---------------------------------------------------------------------

// Deterministic generator. Output is a pure function of
// (client id, prompt, config, seed).
class MockGenerator : public GeneratorClient {
 public:
  enum class Mode { kTemplated, kEcho };

  MockGenerator(std::string id, int tier, Mode mode = Mode::kTemplated)
      : GeneratorClient(std::move(id), tier), mode_(mode) {}

  // Calls for these prompt ids raise RetryableError.
  void set_failing_prompts(std::set<std::string> ids) { failing_ = std::move(ids); }
  // Overrides the text for specific prompt ids.
  void set_fixture(const std::string& prompt_id, std::string text) {
    fixtures_[prompt_id] = std::move(text);
  }

  std::string generate_text(const Prompt& prompt, const GenConfig& config,
                            std::uint64_t seed) const override;

 private:
  Mode mode_;
  std::set<std::string> failing_;
  std::map<std::string, std::string> fixtures_;
};

// Knob shared by the proxy and judge mocks: a response from favored_generator
// gets a bonus on a deterministic favored_rate fraction of prompts. This is
// how funnel loss rates are dialed in for mock runs.
struct FavoredBonus {
  std::string generator_id;
  double rate = 0.0;
  std::uint64_t seed = 0;

  bool applies(const Prompt& prompt, const Response& response) const;
};

class MockProxyReward : public ProxyRewardClient {
 public:
  using ScoreFn = std::function<double(const Prompt&, const Response&)>;

  explicit MockProxyReward(std::string id) : ProxyRewardClient(std::move(id)) {}

  // Exact score for (prompt id, response text).
  void set_fixture(const std::string& prompt_id, const std::string& response_text,
                   double score) {
    table_[{prompt_id, response_text}] = score;
  }
  void set_favored(FavoredBonus bonus, double margin) {
    favored_ = std::move(bonus);
    margin_ = margin;
  }
  // Adds noise * u, u uniform in [0,1) hashed from (prompt id, text).
  void set_noise(double noise) { noise_ = noise; }
  void set_function(ScoreFn fn) { fn_ = std::move(fn); }

  double raw_score(const Prompt& prompt, const Response& response) const override;

 private:
  std::map<std::pair<std::string, std::string>, double> table_;
  std::optional<FavoredBonus> favored_;
  double margin_ = 1.0;
  double noise_ = 0.0;
  ScoreFn fn_;
};

class MockJudge : public JudgeClient {
 public:
  using ReplyFn = std::function<std::string(const Prompt&, const Response&)>;

  MockJudge(std::string id, RubricSet rubrics, int base_score = 3)
      : JudgeClient(std::move(id), std::move(rubrics)), base_score_(base_score) {}

  // Fixture score for (prompt id, response text); replied as "Score: N".
  void set_fixture(const std::string& prompt_id, const std::string& response_text,
                   int score) {
    table_[{prompt_id, response_text}] = "Score: " + std::to_string(score);
  }
  void set_fixture_reply(const std::string& prompt_id,
                         const std::string& response_text, std::string reply) {
    table_[{prompt_id, response_text}] = std::move(reply);
  }
  // Favored responses score base_score + 1.
  void set_favored(FavoredBonus bonus) { favored_ = std::move(bonus); }
  void set_reply_function(ReplyFn fn) { fn_ = std::move(fn); }

  JudgeReply ask(const std::string& rendered_rubric, const Prompt& prompt,
                 const Response& response) const override;

 private:
  int base_score_;
  std::map<std::pair<std::string, std::string>, std::string> table_;
  std::optional<FavoredBonus> favored_;
  ReplyFn fn_;
};

// HTTP backend ----------------------------------------------------------------

// JSON-over-HTTP contract shared by all roles:
//   POST {role, prompt, response?, rubric?, config?} -> {text?, score?}
struct HttpBackendConfig {
  std::string base_url;          // e.g. "http://127.0.0.1:8080"
  std::string path = "/";
  std::string api_key_env;       // bearer token taken from this env var
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{200};
  std::chrono::milliseconds timeout{30000};
};

class HttpBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {}

  // Retries transport errors and 5xx with exponential backoff. Exhausted
  // retries raise RetryableError; 4xx and non-JSON bodies raise
  // PermanentError.
  Json post(const Json& body) const;

  const HttpBackendConfig& config() const { return config_; }

 private:
  HttpBackendConfig config_;
};

class HttpGenerator : public GeneratorClient {
 public:
  HttpGenerator(std::string id, int tier, HttpBackendConfig config)
      : GeneratorClient(std::move(id), tier), backend_(std::move(config)) {}
  std::string generate_text(const Prompt& prompt, const GenConfig& config,
                            std::uint64_t seed) const override;

 private:
  HttpBackend backend_;
};

class HttpProxyReward : public ProxyRewardClient {
 public:
  HttpProxyReward(std::string id, HttpBackendConfig config)
      : ProxyRewardClient(std::move(id)), backend_(std::move(config)) {}
  double raw_score(const Prompt& prompt, const Response& response) const override;

 private:
  HttpBackend backend_;
};

class HttpJudge : public JudgeClient {
 public:
  HttpJudge(std::string id, RubricSet rubrics, HttpBackendConfig config)
      : JudgeClient(std::move(id), std::move(rubrics)), backend_(std::move(config)) {}
  JudgeReply ask(const std::string& rendered_rubric, const Prompt& prompt,
                 const Response& response) const override;

 private:
  HttpBackend backend_;
};

// Registry ----------------------------------------------------------------------

class ClientRegistry {
 public:
  void add(std::shared_ptr<const GeneratorClient> c);
  void add(std::shared_ptr<const ProxyRewardClient> c);
  void add(std::shared_ptr<const JudgeClient> c);

  // Throw ConfigError for unknown ids.
  const GeneratorClient& generator(const std::string& id) const;
  const ProxyRewardClient& proxy(const std::string& id) const;
  const JudgeClient& judge(const std::string& id) const;

  bool has_generator(const std::string& id) const { return generators_.count(id) > 0; }
  bool has_proxy(const std::string& id) const { return proxies_.count(id) > 0; }
  bool has_judge(const std::string& id) const { return judges_.count(id) > 0; }

  // Tier for a generator id, or nullopt if unregistered.
  std::optional<int> tier_of(const std::string& generator_id) const;

  CallLog& log() const { return *log_; }

 private:
  std::map<std::string, std::shared_ptr<const GeneratorClient>> generators_;
  std::map<std::string, std::shared_ptr<const ProxyRewardClient>> proxies_;
  std::map<std::string, std::shared_ptr<const JudgeClient>> judges_;
  std::shared_ptr<CallLog> log_ = std::make_shared<CallLog>();
};

}  // namespace prefpipe
