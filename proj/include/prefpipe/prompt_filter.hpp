#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "prefpipe/clients.hpp"
#include "prefpipe/store.hpp"
#include "prefpipe/types.hpp"

namespace prefpipe {

// Step 1: keep prompts on which the strong model beats the SFT model by more
// than epsilon under the proxy reward model.

struct PromptFilterConfig {
  double epsilon = 0.0;
  std::string sft_client_id;
  std::string strong_client_id;
  std::string proxy_client_id;
  std::map<std::string, std::size_t> per_category_quota;
  GenConfig gen_config;
  std::uint64_t seed = 0;
  std::size_t max_in_flight = 8;

  // Ids must resolve in the registry, quotas must be positive and epsilon
  // must not be NaN. Infinite epsilon is accepted (degenerate thresholds).
  void validate(const ClientRegistry& clients) const;
};

struct PromptVerdict {
  std::string prompt_id;
  double score_strong = 0.0;
  double score_sft = 0.0;
  double delta = 0.0;
  bool kept = false;
  // Both responses are kept so Step 2 can reuse them as pairing candidates.
  Response response_strong;
  Response response_sft;
};

// The keep rule: strong - sft > epsilon. A tie at epsilon drops.
bool keep_prompt(double score_strong, double score_sft, double epsilon);

PromptVerdict make_verdict(std::string prompt_id, double score_strong,
                           double score_sft, double epsilon);

struct PoolSample {
  std::vector<Prompt> prompts;
  std::vector<std::string> warnings;
};

// Per category c with quota q, min(q, available) prompts drawn uniformly
// without replacement. An empty quota map takes the whole source.
PoolSample sample_pool(std::span<const Prompt> source,
                       const std::map<std::string, std::size_t>& per_category_quota,
                       std::uint64_t seed);

// Generates y^G and y^S, proxy-scores both and applies the keep rule.
// Client failures propagate; the caller decides whether to defer.
PromptVerdict filter_prompt(const Prompt& prompt, const PromptFilterConfig& config,
                            const ClientRegistry& clients);

struct Step1Result {
  std::vector<Prompt> kept;  // X*
  std::vector<PromptVerdict> verdicts;
  StageCount stage;
  // Prompts whose verdict could not be computed; rerunning step 1 retries
  // exactly these.
  std::vector<std::string> deferred;
  std::vector<std::string> deferred_reasons;
};

// Prompts already holding a verdict in the store are skipped, so a rerun
// resumes a partial run. Prompts not yet in the store are appended.
Step1Result run_step1(std::span<const Prompt> pool, const PromptFilterConfig& config,
                      const ClientRegistry& clients, RecordStore& store);

Json to_json(const PromptVerdict& v);
PromptVerdict verdict_from_json(const Json& j);

// Verdicts recorded in the store, in the order they were written.
std::vector<PromptVerdict> stored_verdicts(const RecordStore& store);

inline constexpr const char* kStep1StageName = "step1_prompt_filter";

}  // namespace prefpipe
