#include "prefpipe/prompt_filter.hpp"

#include <cmath>
#include <optional>
#include <set>
#include <unordered_map>

#include "prefpipe/errors.hpp"
#include "prefpipe/util.hpp"

namespace prefpipe {

void PromptFilterConfig::validate(const ClientRegistry& clients) const {
  if (std::isnan(epsilon)) throw ConfigError("step1 epsilon is NaN");
  clients.generator(sft_client_id);
  clients.generator(strong_client_id);
  clients.proxy(proxy_client_id);
  for (const auto& [category, q] : per_category_quota) {
    if (q == 0) throw ConfigError("quota for category '" + category + "' must be positive");
  }
}

bool keep_prompt(double score_strong, double score_sft, double epsilon) {
  return score_strong - score_sft > epsilon;
}

PromptVerdict make_verdict(std::string prompt_id, double score_strong, double score_sft,
                           double epsilon) {
  PromptVerdict v;
  v.prompt_id = std::move(prompt_id);
  v.score_strong = score_strong;
  v.score_sft = score_sft;
  v.delta = score_strong - score_sft;
  v.kept = keep_prompt(score_strong, score_sft, epsilon);
  return v;
}

PoolSample sample_pool(std::span<const Prompt> source,
                       const std::map<std::string, std::size_t>& per_category_quota,
                       std::uint64_t seed) {
  if (source.empty()) throw ValidationError("prompt_source", "source is empty");
  std::map<std::string, std::vector<std::size_t>> by_category;
  for (std::size_t i = 0; i < source.size(); ++i) {
    by_category[source[i].category].push_back(i);
  }
  PoolSample out;
  if (per_category_quota.empty()) {
    out.prompts.assign(source.begin(), source.end());
    return out;
  }
  std::vector<std::string> unknown;
  for (const auto& [category, q] : per_category_quota) {
    if (!by_category.count(category)) unknown.push_back(category);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& c : unknown) list += (list.empty() ? "" : ", ") + c;
    throw ValidationError("per_category_quota", "unknown categories: " + list);
  }
  for (const auto& [category, quota] : per_category_quota) {
    auto indices = by_category[category];
    std::mt19937_64 rng(derive_seed(seed, {"sample_pool", category}));
    seeded_shuffle(indices, rng);
    if (quota > indices.size()) {
      out.warnings.push_back("category '" + category + "': quota " +
                             std::to_string(quota) + " exceeds the " +
                             std::to_string(indices.size()) + " available prompts");
    }
    const std::size_t take = std::min(quota, indices.size());
    for (std::size_t k = 0; k < take; ++k) out.prompts.push_back(source[indices[k]]);
  }
  return out;
}

PromptVerdict filter_prompt(const Prompt& prompt, const PromptFilterConfig& config,
                            const ClientRegistry& clients) {
  const auto& strong = clients.generator(config.strong_client_id);
  const auto& sft = clients.generator(config.sft_client_id);
  const auto& proxy = clients.proxy(config.proxy_client_id);
  CallLog* log = &clients.log();

  Response y_strong = generate(strong, prompt, config.gen_config,
                               derive_seed(config.seed, {"step1", "strong", prompt.id}), log);
  Response y_sft = generate(sft, prompt, config.gen_config,
                            derive_seed(config.seed, {"step1", "sft", prompt.id}), log);
  const double s_strong = proxy_score(proxy, prompt, y_strong, log);
  const double s_sft = proxy_score(proxy, prompt, y_sft, log);

  PromptVerdict v = make_verdict(prompt.id, s_strong, s_sft, config.epsilon);
  v.response_strong = std::move(y_strong);
  v.response_sft = std::move(y_sft);
  return v;
}

Json to_json(const PromptVerdict& v) {
  return Json{{"type", "prompt_verdict"},     {"prompt_id", v.prompt_id},
              {"score_strong", v.score_strong}, {"score_sft", v.score_sft},
              {"delta", v.delta},               {"kept", v.kept},
              {"response_strong", v.response_strong},
              {"response_sft", v.response_sft}};
}

PromptVerdict verdict_from_json(const Json& j) {
  PromptVerdict v;
  v.prompt_id = j.at("prompt_id").get<std::string>();
  v.score_strong = j.at("score_strong").get<double>();
  v.score_sft = j.at("score_sft").get<double>();
  v.delta = j.at("delta").get<double>();
  v.kept = j.at("kept").get<bool>();
  v.response_strong = j.at("response_strong").get<Response>();
  v.response_sft = j.at("response_sft").get<Response>();
  return v;
}

std::vector<PromptVerdict> stored_verdicts(const RecordStore& store) {
  std::vector<PromptVerdict> out;
  for (const auto& e : store.events_of_type("prompt_verdict")) {
    out.push_back(verdict_from_json(e));
  }
  return out;
}

Step1Result run_step1(std::span<const Prompt> pool, const PromptFilterConfig& config,
                      const ClientRegistry& clients, RecordStore& store) {
  if (pool.empty()) throw ValidationError("pool", "prompt pool is empty");
  config.validate(clients);

  std::unordered_map<std::string, PromptVerdict> existing;
  for (auto& v : stored_verdicts(store)) existing.emplace(v.prompt_id, std::move(v));

  std::vector<std::size_t> todo;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    validate(pool[i]);
    if (!seen.insert(pool[i].id).second) {
      throw ValidationError("id", "duplicate prompt id in pool: " + pool[i].id);
    }
    if (!existing.count(pool[i].id)) todo.push_back(i);
  }

  struct Outcome {
    std::optional<PromptVerdict> verdict;
    std::string error;
  };
  auto outcomes = parallel_map<Outcome>(
      todo.size(), config.max_in_flight, [&](std::size_t k) -> Outcome {
        try {
          return {filter_prompt(pool[todo[k]], config, clients), {}};
        } catch (const ConfigError&) {
          throw;
        } catch (const std::exception& e) {
          return {std::nullopt, e.what()};
        }
      });

  // Single writer: merge in pool order.
  Step1Result result;
  std::size_t k = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const Prompt& p = pool[i];
    const bool fresh = k < todo.size() && todo[k] == i;
    std::optional<PromptVerdict> v;
    if (fresh) {
      auto& o = outcomes[k++];
      if (!o.verdict) {
        result.deferred.push_back(p.id);
        result.deferred_reasons.push_back(o.error);
        continue;
      }
      if (!store.has_prompt(p.id)) store.append(p);
      store.append_event(to_json(*o.verdict));
      v = std::move(o.verdict);
    } else {
      v = existing.at(p.id);
    }
    if (v->kept) result.kept.push_back(p);
    result.verdicts.push_back(std::move(*v));
  }
  result.stage = {kStep1StageName, pool.size(), result.kept.size(), result.deferred.size()};
  return result;
}

}  // namespace prefpipe
