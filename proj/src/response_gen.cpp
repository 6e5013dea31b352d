#include "prefpipe/response_gen.hpp"

#include <algorithm>
#include <optional>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "prefpipe/errors.hpp"
#include "prefpipe/prompt_filter.hpp"
#include "prefpipe/util.hpp"

namespace prefpipe {

namespace {

std::string source_key(const Response& r) {
  std::string key = r.generator_id;
  for (const auto& [k, v] : r.gen_config) {
    key += '\x1f';
    key += k;
    key += '=';
    key += v;
  }
  return key;
}

}  // namespace

void PairingPlan::validate(const ClientRegistry& clients) const {
  if (generators.size() < 2) {
    throw ConfigError("pairing plan needs at least two generator entries");
  }
  if (pairs_per_prompt < 1) throw ConfigError("pairs_per_prompt must be >= 1");
  bool superior = false;
  for (const auto& g : generators) {
    if (clients.generator(g.client_id).capability_tier() >= min_superior_tier) {
      superior = true;
    }
  }
  if (!superior) {
    throw ConfigError("no generator in the pairing plan reaches min_superior_tier " +
                      std::to_string(min_superior_tier));
  }
}

std::vector<CandidatePair> pair_candidates(std::span<const Candidate> candidates,
                                           const PairingPlan& plan, std::uint64_t seed) {
  std::vector<std::string> keys;
  keys.reserve(candidates.size());
  for (const auto& c : candidates) keys.push_back(source_key(c.response));

  std::map<std::pair<std::string, std::string>, std::vector<CandidatePair>> groups;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (std::size_t j = i + 1; j < candidates.size(); ++j) {
      if (keys[i] == keys[j]) continue;
      if (std::max(candidates[i].tier, candidates[j].tier) < plan.min_superior_tier) {
        continue;
      }
      if (plan.dedup == DedupPolicy::kExactText &&
          candidates[i].response.text == candidates[j].response.text) {
        continue;
      }
      groups[std::minmax(keys[i], keys[j])].emplace_back(i, j);
    }
  }

  std::mt19937_64 rng(mix64(seed));
  std::vector<std::vector<CandidatePair>> lists;
  for (auto& [key, list] : groups) {
    seeded_shuffle(list, rng);
    lists.push_back(std::move(list));
  }
  seeded_shuffle(lists, rng);

  std::vector<CandidatePair> out;
  for (std::size_t round = 0; out.size() < plan.pairs_per_prompt; ++round) {
    bool any = false;
    for (const auto& list : lists) {
      if (round >= list.size()) continue;
      any = true;
      out.push_back(list[round]);
      if (out.size() == plan.pairs_per_prompt) break;
    }
    if (!any) break;
  }
  return out;
}

Step2Result run_step2(std::span<const Prompt> prompts, const PairingPlan& plan,
                      const ClientRegistry& clients, RecordStore& store,
                      std::uint64_t seed) {
  plan.validate(clients);

  std::unordered_set<std::string> done;
  for (const auto& t : store.triads()) done.insert(t.prompt_id);
  std::unordered_map<std::string, PromptVerdict> cached;
  if (plan.reuse_step1_responses) {
    for (auto& v : stored_verdicts(store)) cached.emplace(v.prompt_id, std::move(v));
  }

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (!done.count(prompts[i].id)) todo.push_back(i);
  }

  const std::size_t per_prompt = plan.generators.size();
  struct Gen {
    std::optional<Response> response;
    std::string error;
  };
  auto gens = parallel_map<Gen>(
      todo.size() * per_prompt, plan.max_in_flight, [&](std::size_t k) -> Gen {
        const Prompt& p = prompts[todo[k / per_prompt]];
        const GeneratorSpec& spec = plan.generators[k % per_prompt];
        const auto& client = clients.generator(spec.client_id);
        try {
          return {generate(client, p, spec.config,
                           derive_seed(seed, {"step2", p.id, std::to_string(k % per_prompt)}),
                           &clients.log()),
                  {}};
        } catch (const ConfigError&) {
          throw;
        } catch (const std::exception& e) {
          return {std::nullopt, e.what()};
        }
      });

  Step2Result result;
  // Recorded once per distinct plan so that an idempotent rerun writes nothing.
  const Json plan_event{{"type", "step2_plan"},
                        {"pairs_per_prompt", plan.pairs_per_prompt},
                        {"min_superior_tier", plan.min_superior_tier}};
  const auto recorded = store.events_of_type("step2_plan");
  if (recorded.empty() ||
      recorded.back().at("pairs_per_prompt") != plan_event.at("pairs_per_prompt") ||
      recorded.back().at("min_superior_tier") != plan_event.at("min_superior_tier")) {
    store.append_event(plan_event);
  }

  for (std::size_t t = 0; t < todo.size(); ++t) {
    const Prompt& p = prompts[todo[t]];
    std::vector<Candidate> candidates;
    std::string failure;
    if (auto it = cached.find(p.id); it != cached.end()) {
      for (const Response* r : {&it->second.response_strong, &it->second.response_sft}) {
        if (auto tier = clients.tier_of(r->generator_id)) {
          candidates.push_back({*r, *tier});
        }
      }
    }
    for (std::size_t g = 0; g < per_prompt; ++g) {
      auto& gen = gens[t * per_prompt + g];
      if (!gen.response) {
        failure = gen.error;
        break;
      }
      candidates.push_back(
          {*gen.response, clients.generator(gen.response->generator_id).capability_tier()});
    }
    if (!failure.empty()) {
      result.deferred.push_back(p.id);
      result.deferred_reasons.push_back(failure);
      continue;
    }
    if (!store.has_prompt(p.id)) store.append(p);

    const std::uint64_t pair_seed = derive_seed(seed, {"pairing", p.id});
    const auto pairs = pair_candidates(candidates, plan, pair_seed);
    std::mt19937_64 orient(mix64(pair_seed ^ 0x5bd1e995ULL));
    for (const auto& [i, j] : pairs) {
      Triad triad;
      triad.prompt_id = p.id;
      const bool swap = (orient() & 1U) != 0;
      triad.response_a = candidates[swap ? j : i].response;
      triad.response_b = candidates[swap ? i : j].response;
      triad.id = store.append(triad);
      result.triads.push_back(std::move(triad));
    }
    if (pairs.size() < plan.pairs_per_prompt) {
      result.shortfall += plan.pairs_per_prompt - pairs.size();
      result.shortfall_prompts.push_back(p.id);
    }
  }
  if (result.shortfall > 0) {
    store.append_event({{"type", "step2_shortfall"},
                        {"shortfall", result.shortfall},
                        {"prompts", result.shortfall_prompts}});
  }
  result.stage = {kStep2StageName, todo.size() * plan.pairs_per_prompt, result.triads.size(),
                  result.deferred.size() * plan.pairs_per_prompt};
  return result;
}

}  // namespace prefpipe
