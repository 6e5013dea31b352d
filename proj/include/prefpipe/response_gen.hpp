#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "prefpipe/clients.hpp"
#include "prefpipe/store.hpp"
#include "prefpipe/types.hpp"

namespace prefpipe {

// Step 2: build diverse response pairs per kept prompt.

enum class DedupPolicy { kExactText, kNone };

// One generator plus the parameter setting it is run with. The same client
// may appear several times with different configs.
struct GeneratorSpec {
  std::string client_id;
  GenConfig config;
};

struct PairingPlan {
  std::vector<GeneratorSpec> generators;
  int min_superior_tier = 0;
  std::size_t pairs_per_prompt = 2;
  DedupPolicy dedup = DedupPolicy::kExactText;
  // Admit the Step 1 responses (y^G, y^S) as candidates.
  bool reuse_step1_responses = true;
  std::size_t max_in_flight = 8;

  // Needs >= 2 generator entries, pairs_per_prompt >= 1, every id resolvable
  // and at least one generator at or above min_superior_tier.
  void validate(const ClientRegistry& clients) const;
};

struct Candidate {
  Response response;
  int tier = 0;
};

using CandidatePair = std::pair<std::size_t, std::size_t>;

// Eligible pairs: distinct (generator_id, gen_config), at least one side at
// or above min_superior_tier, and distinct texts under ExactText. Pairs are
// dealt round-robin across generator combinations, each combination's list
// and the combination order seeded-shuffled. At most pairs_per_prompt pairs.
std::vector<CandidatePair> pair_candidates(std::span<const Candidate> candidates,
                                           const PairingPlan& plan, std::uint64_t seed);

struct Step2Result {
  std::vector<Triad> triads;
  // Triad slots (prompts x pairs_per_prompt) that could not be filled.
  std::size_t shortfall = 0;
  std::vector<std::string> shortfall_prompts;
  std::vector<std::string> deferred;
  std::vector<std::string> deferred_reasons;
  StageCount stage;
};

// Prompts that already have triads in the store are skipped so reruns
// resume. Records a "step2_plan" event carrying pairs_per_prompt.
Step2Result run_step2(std::span<const Prompt> prompts, const PairingPlan& plan,
                      const ClientRegistry& clients, RecordStore& store,
                      std::uint64_t seed);

inline constexpr const char* kStep2StageName = "step2_response_gen";

}  // namespace prefpipe
