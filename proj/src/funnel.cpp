#include "prefpipe/funnel.hpp"

#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "prefpipe/errors.hpp"
#include "prefpipe/pair_filter.hpp"
#include "prefpipe/prompt_filter.hpp"
#include "prefpipe/response_gen.hpp"

namespace prefpipe {

FunnelReport make_report(std::vector<StageCount> stages) {
  FunnelReport r;
  r.stages = std::move(stages);
  if (!r.stages.empty()) {
    const auto& first = r.stages.front();
    const auto& last = r.stages.back();
    double direct = first.count_in == 0 ? 0.0
                                        : static_cast<double>(last.count_out) /
                                              static_cast<double>(first.count_in);
    double product = 1.0;
    for (const auto& s : r.stages) product *= s.retention();
    if (std::abs(direct - product) > 1e-12 * std::max(1.0, std::abs(direct))) {
      // A zero-input stage makes the product 0 while the direct ratio is
      // already 0; anything else means the chain is broken.
      validate(FunnelReport{r.stages, direct});
      throw IntegrityError("funnel retention mismatch: product of stages " +
                           std::to_string(product) + " vs overall " +
                           std::to_string(direct));
    }
    r.overall_retention = direct;
  }
  validate(r);
  return r;
}

FunnelReport report_funnel(const RecordStore& store) {
  // Last verdict per prompt wins (there is normally exactly one).
  std::unordered_map<std::string, bool> verdicts;
  for (const auto& e : store.events_of_type("prompt_verdict")) {
    verdicts[e.at("prompt_id").get<std::string>()] = e.at("kept").get<bool>();
  }
  std::uint64_t k = 1;
  for (const auto& e : store.events_of_type("step2_plan")) {
    k = e.at("pairs_per_prompt").get<std::uint64_t>();
  }

  const auto triads = store.triads();
  std::uint64_t generated = 0, judged_kept = 0, pending3 = 0, human_kept = 0,
                human_dropped = 0, awaiting_label = 0;
  std::unordered_set<std::string> prompts_with_triads;
  for (const auto& t : triads) {
    prompts_with_triads.insert(t.prompt_id);
    ++generated;
    switch (t.stage) {
      case Stage::kGenerated:
      case Stage::kJudgeScored:
        ++pending3;
        break;
      case Stage::kFilterKept:
        ++judged_kept;
        ++awaiting_label;
        break;
      case Stage::kFilterDropped:
        break;
      case Stage::kHumanKept:
        ++judged_kept;
        ++human_kept;
        break;
      case Stage::kHumanDropped:
        ++judged_kept;
        ++human_dropped;
        break;
    }
  }

  std::vector<StageCount> stages;
  if (!verdicts.empty()) {
    std::uint64_t kept = 0;
    std::set<std::string> kept_ids;
    for (const auto& [id, keep] : verdicts) {
      if (keep) {
        ++kept;
        kept_ids.insert(id);
      }
    }
    stages.push_back({kStep1StageName, verdicts.size() * k, kept * k, 0});

    std::set<std::string> short_prompts;
    for (const auto& e : store.events_of_type("step2_shortfall")) {
      for (const auto& p : e.at("prompts")) short_prompts.insert(p.get<std::string>());
    }
    std::uint64_t unprocessed = 0;
    for (const auto& id : kept_ids) {
      if (!prompts_with_triads.count(id) && !short_prompts.count(id)) ++unprocessed;
    }
    StageCount s2{kStep2StageName, kept * k, generated, unprocessed * k};
    if (generated + unprocessed * k > kept * k) {
      throw IntegrityError("step 2 produced " + std::to_string(generated) +
                           " triads for " + std::to_string(kept * k) + " slots");
    }
    if (s2.count_out != s2.count_in) stages.push_back(s2);
  }
  if (generated > 0) {
    stages.push_back({kStep3StageName, generated, judged_kept, pending3});
  }
  if (human_kept + human_dropped > 0) {
    stages.push_back({kStep4StageName, judged_kept, human_kept, awaiting_label});
  }
  return make_report(std::move(stages));
}

std::string to_csv(const FunnelReport& report) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "stage,count_in,count_out,pending,retention\n";
  for (const auto& s : report.stages) {
    os << s.stage_name << ',' << s.count_in << ',' << s.count_out << ',' << s.pending << ','
       << s.retention() << '\n';
  }
  os << "overall,,,,";
  if (report.overall_retention) {
    os << *report.overall_retention;
  } else {
    os << "no data";
  }
  os << '\n';
  return os.str();
}

std::string to_text(const FunnelReport& report) {
  std::ostringstream os;
  if (report.stages.empty()) {
    os << "funnel: no data\n";
    return os.str();
  }
  os << std::fixed << std::setprecision(3);
  for (const auto& s : report.stages) {
    os << std::left << std::setw(22) << s.stage_name << std::right << std::setw(9)
       << s.count_in << " -> " << std::setw(9) << s.count_out << "  retention "
       << s.retention() << "  loss " << (1.0 - s.retention());
    if (s.pending) os << "  (" << s.pending << " pending)";
    os << '\n';
  }
  os << "overall retention " << *report.overall_retention << '\n';
  return os.str();
}

}  // namespace prefpipe
