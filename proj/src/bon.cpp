#include "prefpipe/bon.hpp"

#include <cmath>
#include <optional>

#include "prefpipe/errors.hpp"
#include "prefpipe/util.hpp"

namespace prefpipe {

std::size_t bon_select(std::span<const double> rewards) {
  if (rewards.empty()) throw ValidationError("rewards", "no candidates");
  std::size_t best = 0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    if (!std::isfinite(rewards[i])) {
      throw ValidationError("rewards", "candidate " + std::to_string(i) + " has a non-finite reward");
    }
    if (rewards[i] > rewards[best]) best = i;
  }
  return best;
}

double bon_gain(long long n) {
  if (n < 1) throw ValidationError("n", "must be >= 1, got " + std::to_string(n));
  const double nd = static_cast<double>(n);
  return std::log(nd) - (nd - 1.0) / nd;
}

RewardFn model_reward(RewardModelParams params) {
  FeatureExtractor extractor(params.dim, params.mode, params.feature_seed);
  return [params = std::move(params), extractor](const Prompt& prompt,
                                                 const Response& response) {
    return reward(params, extractor.extract(prompt.text, response.text));
  };
}

CandidateSets generate_candidates(std::span<const Prompt> prompts,
                                  const GeneratorClient& generator, std::size_t n,
                                  std::uint64_t seed, std::size_t max_in_flight,
                                  CallLog* log) {
  if (n == 0) throw ValidationError("n", "must be >= 1");
  auto flat = parallel_map<std::optional<Response>>(
      prompts.size() * n, max_in_flight, [&](std::size_t k) -> std::optional<Response> {
        const Prompt& p = prompts[k / n];
        return generate(generator, p, {},
                        derive_seed(seed, {"bon", p.id, std::to_string(k % n)}), log);
      });
  CandidateSets out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    auto& set = out[prompts[i].id];
    for (std::size_t j = 0; j < n; ++j) set.push_back(std::move(*flat[i * n + j]));
  }
  return out;
}

std::map<std::string, BonPick> bon_pick(const CandidateSets& candidates,
                                        const std::map<std::string, Prompt>& prompts,
                                        std::size_t n, const RewardFn& reward_fn) {
  std::map<std::string, BonPick> out;
  for (const auto& [prompt_id, set] : candidates) {
    if (set.size() < n) {
      throw ValidationError("candidates", "prompt " + prompt_id + " has " +
                                              std::to_string(set.size()) + " candidates, need " +
                                              std::to_string(n));
    }
    auto pit = prompts.find(prompt_id);
    if (pit == prompts.end()) throw NotFoundError("no prompt for candidates " + prompt_id);
    std::vector<double> rewards;
    rewards.reserve(n);
    for (std::size_t i = 0; i < n; ++i) rewards.push_back(reward_fn(pit->second, set[i]));
    const std::size_t best = bon_select(rewards);
    out[prompt_id] = {best, rewards[best], set[best]};
  }
  return out;
}

Comparator oracle_comparator(RewardFn truth) {
  return [truth = std::move(truth)](const Prompt& p, const Response& a, const Response& b) {
    const double ra = truth(p, a);
    const double rb = truth(p, b);
    if (ra > rb) return Outcome::kAWins;
    if (rb > ra) return Outcome::kBWins;
    return Outcome::kTie;
  };
}

Comparator judge_comparator(const JudgeClient& judge, CallLog* log) {
  return [&judge, log](const Prompt& p, const Response& a, const Response& b) {
    if (a.text == b.text) return Outcome::kTie;
    const int sa = judge_score(judge, p, a, log).score;
    const int sb = judge_score(judge, p, b, log).score;
    if (sa > sb) return Outcome::kAWins;
    if (sb > sa) return Outcome::kBWins;
    return Outcome::kTie;
  };
}

WinRate win_rate(const std::map<std::string, Response>& a,
                 const std::map<std::string, Response>& b,
                 const std::map<std::string, Prompt>& prompts, const Comparator& comparator) {
  std::string only_a, only_b;
  for (const auto& [id, r] : a) {
    if (!b.count(id)) only_a += (only_a.empty() ? "" : ", ") + id;
  }
  for (const auto& [id, r] : b) {
    if (!a.count(id)) only_b += (only_b.empty() ? "" : ", ") + id;
  }
  if (!only_a.empty() || !only_b.empty()) {
    throw ValidationError("selections", "prompt sets differ; only in a: [" + only_a +
                                            "], only in b: [" + only_b + "]");
  }
  if (a.empty()) throw ValidationError("selections", "no prompts to compare");

  WinRate w;
  for (const auto& [id, ra] : a) {
    auto pit = prompts.find(id);
    if (pit == prompts.end()) throw NotFoundError("no prompt for selection " + id);
    switch (comparator(pit->second, ra, b.at(id))) {
      case Outcome::kAWins:
        ++w.wins_a;
        break;
      case Outcome::kBWins:
        ++w.wins_b;
        break;
      case Outcome::kTie:
        ++w.ties;
        break;
    }
  }
  w.total = a.size();
  w.rate = (static_cast<double>(w.wins_a) + 0.5 * static_cast<double>(w.ties)) /
           static_cast<double>(w.total);
  const double decisive = static_cast<double>(w.wins_a + w.wins_b);
  if (decisive > 0) {
    w.z_score = (static_cast<double>(w.wins_a) - static_cast<double>(w.wins_b)) /
                std::sqrt(decisive);
  }
  return w;
}

std::map<std::string, Response> responses_of(const std::map<std::string, BonPick>& picks) {
  std::map<std::string, Response> out;
  for (const auto& [id, pick] : picks) out[id] = pick.response;
  return out;
}

}  // namespace prefpipe
