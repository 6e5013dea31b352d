#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace prefpipe {

using Json = nlohmann::json;

// Free-form generation parameters (temperature, size tag, ...).
using GenConfig = std::map<std::string, std::string>;

struct Prompt {
  std::string id;
  std::string category;
  std::string text;
  std::string source;

  bool operator==(const Prompt&) const = default;
};

struct Response {
  std::string text;
  std::string generator_id;
  GenConfig gen_config;
  // Set when a backend legitimately produced nothing; only then may text be
  // empty.
  bool degenerate = false;

  bool operator==(const Response&) const = default;
};

// Stage machine:
//   Generated -> JudgeScored -> {FilterKept, FilterDropped}
//   FilterKept -> {HumanKept, HumanDropped}
enum class Stage {
  kGenerated,
  kJudgeScored,
  kFilterKept,
  kFilterDropped,
  kHumanKept,
  kHumanDropped,
};

enum class Side { kA, kB };

struct Triad {
  std::string id;
  std::string prompt_id;
  Response response_a;
  Response response_b;
  std::optional<int> judge_score_a;
  std::optional<int> judge_score_b;
  Stage stage = Stage::kGenerated;
  // Final preference, present iff stage == kHumanKept.
  std::optional<Side> chosen;
  // Judge-derived hint stored at FilterKept; no training authority.
  std::optional<Side> provisional_chosen;

  const Response& response(Side s) const {
    return s == Side::kA ? response_a : response_b;
  }

  bool operator==(const Triad&) const = default;
};

struct StageCount {
  std::string stage_name;
  std::uint64_t count_in = 0;
  std::uint64_t count_out = 0;
  // Items that entered the stage but have no outcome yet (e.g. unlabeled).
  std::uint64_t pending = 0;

  double retention() const {
    return count_in == 0 ? 0.0
                         : static_cast<double>(count_out) /
                               static_cast<double>(count_in);
  }

  bool operator==(const StageCount&) const = default;
};

struct FunnelReport {
  std::vector<StageCount> stages;
  // Empty when there are no stages ("no data").
  std::optional<double> overall_retention;

  bool operator==(const FunnelReport&) const = default;
};

std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);
std::string_view to_string(Side s);
Side side_from_string(std::string_view s);

// Ordering rank used to check that triads never move backwards.
int stage_rank(Stage s);
bool transition_allowed(Stage from, Stage to);

// Invariant checks. Throw ValidationError naming the failing field.
void validate(const Prompt& p);
void validate(const Response& r, std::string_view field = "response");
void validate(const Triad& t);
void validate(const FunnelReport& r);

void to_json(Json& j, const Prompt& p);
void from_json(const Json& j, Prompt& p);
void to_json(Json& j, const Response& r);
void from_json(const Json& j, Response& r);
void to_json(Json& j, const Triad& t);
void from_json(const Json& j, Triad& t);
void to_json(Json& j, const StageCount& s);
void from_json(const Json& j, StageCount& s);
void to_json(Json& j, const FunnelReport& r);
void from_json(const Json& j, FunnelReport& r);

}  // namespace prefpipe
