#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "prefpipe/store.hpp"
#include "prefpipe/types.hpp"

namespace prefpipe {

// Step 4: human review of FilterKept triads through a lease-based queue.

enum class PresentedOrder { kAB, kBA };

enum class Decision { kPreferA, kPreferB, kTie, kDiscard };

std::string_view to_string(PresentedOrder o);
std::string_view to_string(Decision d);

// Accepts canonical decisions ("prefer_a", "prefer_b", "tie", "discard") and
// positional ones ("first", "second") which are mapped through the order
// the annotator was shown.
Decision translate_decision(std::string_view decision, PresentedOrder shown);

using TimePoint = std::chrono::system_clock::time_point;

struct LabelTask {
  std::string triad_id;
  std::string lease_id;
  TimePoint lease_expiry;
  PresentedOrder presented_order = PresentedOrder::kAB;
  std::string prompt_id;
  std::string category;
  std::string prompt_text;
  std::string first_text;
  std::string second_text;
  // Only filled when the service is configured to reveal judge scores.
  std::optional<int> first_judge_score;
  std::optional<int> second_judge_score;
  // Positional hint derived from the judge ("first"/"second"), same gating.
  std::optional<std::string> judge_hint;
};

Json to_json(const LabelTask& task);

struct LabelingConfig {
  std::chrono::seconds lease_duration{600};
  int max_renewals = 1;
  bool reveal_judge_scores = false;
  std::uint64_t seed = 0;
};

struct LabelProgress {
  std::size_t pending = 0;
  std::size_t leased = 0;
  std::size_t kept = 0;
  std::size_t dropped = 0;
};

Json to_json(const LabelProgress& p);

// Queue mutations (lease, renew, submit) are linearized by one mutex. The
// queue is the only writer of verdicts to the store while it is running.
class LabelQueue {
 public:
  using Clock = std::function<TimePoint()>;

  LabelQueue(RecordStore& store, LabelingConfig config,
             Clock clock = [] { return std::chrono::system_clock::now(); });

  // Leases the oldest unleased FilterKept triad, or returns nullopt when
  // nothing is available. Expired leases are reclaimed first.
  std::optional<LabelTask> lease_next(const std::string& annotator_id);

  // Extends a live lease by lease_duration, at most max_renewals times.
  LabelTask renew(const std::string& lease_id, const std::string& annotator_id);

  // Finalizes the leased triad. PreferA/PreferB -> HumanKept with chosen set,
  // Tie/Discard -> HumanDropped. Unknown or expired lease -> LeaseError (an
  // expired triad goes back to the queue); reused lease -> ConflictError.
  Triad submit(const std::string& lease_id, const std::string& annotator_id,
               std::string_view decision, const std::string& note = "");

  LabelProgress progress() const;

  // Picks up FilterKept triads appended to the store after construction.
  void refresh();

 private:
  struct Lease {
    std::string triad_id;
    std::string annotator_id;
    TimePoint expiry;
    PresentedOrder order;
    int renewals = 0;
  };

  void reclaim_expired(TimePoint now);
  LabelTask make_task(const Lease& lease, const std::string& lease_id) const;
  std::string next_lease_id();

  RecordStore& store_;
  LabelingConfig config_;
  Clock clock_;
  mutable std::mutex mu_;
  std::mt19937_64 rng_;
  std::vector<std::string> queue_order_;   // triad ids, store order
  std::set<std::size_t> pending_;          // positions in queue_order_
  std::map<std::string, std::size_t> position_;
  std::map<std::string, Lease> leases_;    // lease id -> live lease
  std::map<std::string, std::string> lease_of_triad_;
  std::set<std::string> spent_leases_;
  std::set<std::string> expired_leases_;
  std::size_t kept_ = 0;
  std::size_t dropped_ = 0;
};

// One training row: prompt with chosen and rejected text.
struct PreferenceExample {
  std::string triad_id;
  std::string prompt_id;
  std::string prompt;
  std::string chosen;
  std::string rejected;
  // Precomputed features for the External feature mode.
  std::optional<std::vector<double>> chosen_features;
  std::optional<std::vector<double>> rejected_features;
};

Json to_json(const PreferenceExample& e);
PreferenceExample preference_from_json(const Json& j);

// Exactly the HumanKept triads, oriented by chosen, in store order.
std::vector<PreferenceExample> export_training_set(const RecordStore& store);

void write_preference_jsonl(const std::filesystem::path& path,
                            const std::vector<PreferenceExample>& rows);
// Corrupt lines raise IntegrityError with the line number.
std::vector<PreferenceExample> read_preference_jsonl(const std::filesystem::path& path);

}  // namespace prefpipe
