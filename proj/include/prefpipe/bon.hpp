#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "prefpipe/clients.hpp"
#include "prefpipe/reward_model.hpp"
#include "prefpipe/types.hpp"

namespace prefpipe {

// Best-of-N reranking: sample n candidates, keep the one with the highest
// reward.

// Index of the maximum; the lowest index wins ties. Empty or non-finite
// input -> ValidationError.
std::size_t bon_select(std::span<const double> rewards);

// log(n) - (n - 1) / n, natural log. n < 1 -> ValidationError.
double bon_gain(long long n);

inline const std::vector<std::size_t> kDefaultBonSizes = {5, 10, 20, 50};

using RewardFn = std::function<double(const Prompt&, const Response&)>;

// Scores with a trained model; hashed features are computed on the fly.
RewardFn model_reward(RewardModelParams params);

// Candidates per prompt id, in sampling order.
using CandidateSets = std::map<std::string, std::vector<Response>>;

// n samples per prompt from one generator, seeds derived from (seed, prompt,
// sample index). Sampling max(n) once and reading prefixes gives nested
// candidate sets across n.
CandidateSets generate_candidates(std::span<const Prompt> prompts,
                                  const GeneratorClient& generator, std::size_t n,
                                  std::uint64_t seed, std::size_t max_in_flight = 8,
                                  CallLog* log = nullptr);

struct BonPick {
  std::size_t index = 0;
  double reward = 0.0;
  Response response;
};

// Chosen response per prompt id, using the first n candidates of each set.
std::map<std::string, BonPick> bon_pick(const CandidateSets& candidates,
                                        const std::map<std::string, Prompt>& prompts,
                                        std::size_t n, const RewardFn& reward);

enum class Outcome { kAWins, kBWins, kTie };

using Comparator =
    std::function<Outcome(const Prompt& prompt, const Response& a, const Response& b)>;

// Higher true reward wins; equal rewards tie.
Comparator oracle_comparator(RewardFn truth);
// Higher judge score wins.
Comparator judge_comparator(const JudgeClient& judge, CallLog* log = nullptr);

struct WinRate {
  std::size_t wins_a = 0;
  std::size_t wins_b = 0;
  std::size_t ties = 0;
  std::size_t total = 0;
  // (wins_a + 0.5 * ties) / total
  double rate = 0.0;
  // Sign-test z over decisive prompts: (wins_a - wins_b) / sqrt(wins_a +
  // wins_b). Above 1.645 is one-sided significant at 5%.
  double z_score = 0.0;
};

// Both selection maps must cover the same prompt ids; otherwise
// ValidationError listing the difference.
WinRate win_rate(const std::map<std::string, Response>& a,
                 const std::map<std::string, Response>& b,
                 const std::map<std::string, Prompt>& prompts, const Comparator& comparator);

std::map<std::string, Response> responses_of(const std::map<std::string, BonPick>& picks);

}  // namespace prefpipe
