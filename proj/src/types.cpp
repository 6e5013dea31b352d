#include "prefpipe/types.hpp"

#include <cmath>

#include "prefpipe/errors.hpp"

namespace prefpipe {

namespace {

struct StageName {
  Stage stage;
  std::string_view name;
};

constexpr StageName kStageNames[] = {
    {Stage::kGenerated, "Generated"},
    {Stage::kJudgeScored, "JudgeScored"},
    {Stage::kFilterKept, "FilterKept"},
    {Stage::kFilterDropped, "FilterDropped"},
    {Stage::kHumanKept, "HumanKept"},
    {Stage::kHumanDropped, "HumanDropped"},
};

void check_score(const std::optional<int>& s, const char* field) {
  if (s && (*s < 1 || *s > 5)) {
    throw ValidationError(field, "judge score " + std::to_string(*s) +
                                     " outside [1,5]");
  }
}

}  // namespace

std::string_view to_string(Stage s) {
  for (const auto& e : kStageNames) {
    if (e.stage == s) return e.name;
  }
  return "?";
}

Stage stage_from_string(std::string_view s) {
  for (const auto& e : kStageNames) {
    if (e.name == s) return e.stage;
  }
  throw ValidationError("stage", "unknown stage '" + std::string(s) + "'");
}

std::string_view to_string(Side s) { return s == Side::kA ? "A" : "B"; }

Side side_from_string(std::string_view s) {
  if (s == "A") return Side::kA;
  if (s == "B") return Side::kB;
  throw ValidationError("chosen", "expected A or B, got '" + std::string(s) + "'");
}

int stage_rank(Stage s) {
  switch (s) {
    case Stage::kGenerated:
      return 0;
    case Stage::kJudgeScored:
      return 1;
    case Stage::kFilterKept:
    case Stage::kFilterDropped:
      return 2;
    case Stage::kHumanKept:
    case Stage::kHumanDropped:
      return 3;
  }
  return -1;
}

bool transition_allowed(Stage from, Stage to) {
  switch (from) {
    case Stage::kGenerated:
      return to == Stage::kJudgeScored;
    case Stage::kJudgeScored:
      return to == Stage::kFilterKept || to == Stage::kFilterDropped;
    case Stage::kFilterKept:
      return to == Stage::kHumanKept || to == Stage::kHumanDropped;
    case Stage::kFilterDropped:
    case Stage::kHumanKept:
    case Stage::kHumanDropped:
      return false;
  }
  return false;
}

void validate(const Prompt& p) {
  if (p.id.empty()) throw ValidationError("id", "must be non-empty");
  if (p.category.empty()) throw ValidationError("category", "must be non-empty");
  if (p.text.empty()) throw ValidationError("text", "must be non-empty");
}

void validate(const Response& r, std::string_view field) {
  const std::string f(field);
  if (r.generator_id.empty()) {
    throw ValidationError(f + ".generator_id", "must be non-empty");
  }
  if (r.text.empty() && !r.degenerate) {
    throw ValidationError(f + ".text", "empty text on a response not flagged degenerate");
  }
}

void validate(const Triad& t) {
  if (t.id.empty()) throw ValidationError("id", "must be non-empty");
  if (t.prompt_id.empty()) throw ValidationError("prompt_id", "must be non-empty");
  validate(t.response_a, "response_a");
  validate(t.response_b, "response_b");
  check_score(t.judge_score_a, "judge_score_a");
  check_score(t.judge_score_b, "judge_score_b");
  if (t.chosen.has_value() != (t.stage == Stage::kHumanKept)) {
    throw ValidationError("chosen", "must be present iff stage is HumanKept");
  }
  if (stage_rank(t.stage) >= 1 && (!t.judge_score_a || !t.judge_score_b)) {
    throw ValidationError("judge_score_a",
                          "scores required once a triad is judge-scored");
  }
}

void validate(const FunnelReport& r) {
  for (std::size_t i = 0; i < r.stages.size(); ++i) {
    const auto& s = r.stages[i];
    if (s.count_out > s.count_in) {
      throw IntegrityError("funnel stage '" + s.stage_name + "': count_out " +
                           std::to_string(s.count_out) + " exceeds count_in " +
                           std::to_string(s.count_in));
    }
    if (i > 0 && r.stages[i - 1].count_out != s.count_in) {
      throw IntegrityError("funnel stage '" + s.stage_name + "': count_in " +
                           std::to_string(s.count_in) +
                           " does not match previous count_out " +
                           std::to_string(r.stages[i - 1].count_out));
    }
  }
  if (r.stages.empty() != !r.overall_retention.has_value()) {
    throw IntegrityError("funnel overall retention present without stages");
  }
}

void to_json(Json& j, const Prompt& p) {
  j = Json{{"id", p.id}, {"category", p.category}, {"text", p.text},
           {"source", p.source}};
}

void from_json(const Json& j, Prompt& p) {
  p.id = j.value("id", "");
  p.category = j.at("category").get<std::string>();
  p.text = j.at("text").get<std::string>();
  p.source = j.value("source", "");
}

void to_json(Json& j, const Response& r) {
  j = Json{{"text", r.text},
           {"generator_id", r.generator_id},
           {"gen_config", r.gen_config}};
  if (r.degenerate) j["degenerate"] = true;
}

void from_json(const Json& j, Response& r) {
  r.text = j.at("text").get<std::string>();
  r.generator_id = j.at("generator_id").get<std::string>();
  r.gen_config = j.value("gen_config", GenConfig{});
  r.degenerate = j.value("degenerate", false);
}

void to_json(Json& j, const Triad& t) {
  j = Json{{"id", t.id},
           {"prompt_id", t.prompt_id},
           {"response_a", t.response_a},
           {"response_b", t.response_b},
           {"judge_score_a", t.judge_score_a ? Json(*t.judge_score_a) : Json()},
           {"judge_score_b", t.judge_score_b ? Json(*t.judge_score_b) : Json()},
           {"stage", to_string(t.stage)},
           {"chosen", t.chosen ? Json(to_string(*t.chosen)) : Json()}};
  if (t.provisional_chosen) {
    j["provisional_chosen"] = to_string(*t.provisional_chosen);
  }
}

void from_json(const Json& j, Triad& t) {
  auto opt_int = [&](const char* key) -> std::optional<int> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<int>();
  };
  auto opt_side = [&](const char* key) -> std::optional<Side> {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return side_from_string(j[key].get<std::string>());
  };
  t.id = j.value("id", "");
  t.prompt_id = j.at("prompt_id").get<std::string>();
  t.response_a = j.at("response_a").get<Response>();
  t.response_b = j.at("response_b").get<Response>();
  t.judge_score_a = opt_int("judge_score_a");
  t.judge_score_b = opt_int("judge_score_b");
  t.stage = stage_from_string(j.value("stage", "Generated"));
  t.chosen = opt_side("chosen");
  t.provisional_chosen = opt_side("provisional_chosen");
}

void to_json(Json& j, const StageCount& s) {
  j = Json{{"stage_name", s.stage_name},
           {"count_in", s.count_in},
           {"count_out", s.count_out},
           {"retention", s.retention()}};
  if (s.pending) j["pending"] = s.pending;
}

void from_json(const Json& j, StageCount& s) {
  s.stage_name = j.at("stage_name").get<std::string>();
  s.count_in = j.at("count_in").get<std::uint64_t>();
  s.count_out = j.at("count_out").get<std::uint64_t>();
  s.pending = j.value("pending", std::uint64_t{0});
}

void to_json(Json& j, const FunnelReport& r) {
  j = Json{{"stage_counts", r.stages},
           {"overall_retention",
            r.overall_retention ? Json(*r.overall_retention) : Json("no data")}};
}

void from_json(const Json& j, FunnelReport& r) {
  r.stages = j.at("stage_counts").get<std::vector<StageCount>>();
  const auto& o = j.at("overall_retention");
  if (o.is_number()) {
    r.overall_retention = o.get<double>();
  } else {
    r.overall_retention.reset();
  }
}

}  // namespace prefpipe
