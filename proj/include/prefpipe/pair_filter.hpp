#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prefpipe/clients.hpp"
#include "prefpipe/store.hpp"
#include "prefpipe/types.hpp"

namespace prefpipe {

// Step 3: judge both responses 1-5 and keep the pair when its score cell is
// green in the 5x5 filter matrix.

class FilterMatrix {
 public:
  // keep(i, j) true exactly when 1 <= |i - j| <= 2. Ties and extreme gaps
  // are discarded.
  static FilterMatrix default_matrix();
  // 25 flags, row-major, rows indexed by score_a 1..5. Must be symmetric with
  // an all-false diagonal.
  static FilterMatrix from_row_major(std::span<const bool> cells);

  bool keep(int score_a, int score_b) const;
  std::array<bool, 25> row_major() const;

  bool operator==(const FilterMatrix&) const = default;

 private:
  std::array<std::array<bool, 5>, 5> cells_{};
};

struct PairDecision {
  bool kept = false;
  // Side with the higher judge score; set only for kept pairs.
  std::optional<Side> provisional_chosen;
};

// Pure: depends on the two scores and the matrix, never on response text.
PairDecision decide_pair(int score_a, int score_b, const FilterMatrix& matrix);

// Scores a Generated triad and moves it through JudgeScored to FilterKept or
// FilterDropped. Judge failures leave the triad untouched and propagate.
Triad filter_pair(const std::string& triad_id, const JudgeClient& judge,
                  const FilterMatrix& matrix, RecordStore& store);

struct Step3Result {
  std::vector<Triad> kept;
  std::size_t dropped = 0;
  // Triads parked after a judge failure; still at Generated.
  std::vector<std::string> deferred;
  std::vector<std::string> deferred_reasons;
  StageCount stage;
};

// Scores every Generated triad in triad_ids (all Generated triads in the
// store when empty), fanning judge calls out over max_in_flight workers.
Step3Result run_step3(const JudgeClient& judge, const FilterMatrix& matrix,
                      RecordStore& store, std::span<const std::string> triad_ids = {},
                      std::size_t max_in_flight = 8, CallLog* log = nullptr);

inline constexpr const char* kStep3StageName = "step3_pair_filter";

}  // namespace prefpipe
