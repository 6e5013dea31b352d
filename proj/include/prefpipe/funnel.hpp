#pragma once

#include <string>
#include <vector>

#include "prefpipe/store.hpp"
#include "prefpipe/types.hpp"

namespace prefpipe {

inline constexpr const char* kStep4StageName = "step4_human_label";

// Builds a report from chained stage counts. Overall retention is computed
// twice (last out / first in, and the product of stage retentions) and the
// two must agree; a broken chain raises IntegrityError.
FunnelReport make_report(std::vector<StageCount> stages);

// Derives the funnel from what the store recorded.
//
// Counts are in sample slots: with k pairs per prompt, each Step 1 prompt
// stands for k samples, so every stage chains and overall retention stays in
// [0,1]. The Step 2 row only appears when Step 2 lost slots (shortfall) or
// still has prompts to process; the Step 4 row appears once any verdict
// exists. An empty store yields a report without stages.
FunnelReport report_funnel(const RecordStore& store);

// stage,count_in,count_out,pending,retention rows plus an overall line.
std::string to_csv(const FunnelReport& report);
std::string to_text(const FunnelReport& report);

}  // namespace prefpipe
