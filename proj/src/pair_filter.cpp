#include "prefpipe/pair_filter.hpp"

#include <cstdlib>
#include <optional>

#include "prefpipe/errors.hpp"
#include "prefpipe/util.hpp"

namespace prefpipe {

FilterMatrix FilterMatrix::default_matrix() {
  FilterMatrix m;
  for (int i = 1; i <= 5; ++i) {
    for (int j = 1; j <= 5; ++j) {
      const int gap = std::abs(i - j);
      m.cells_[i - 1][j - 1] = gap >= 1 && gap <= 2;
    }
  }
  return m;
}

FilterMatrix FilterMatrix::from_row_major(std::span<const bool> cells) {
  if (cells.size() != 25) {
    throw ConfigError("filter matrix needs 25 cells, got " + std::to_string(cells.size()));
  }
  FilterMatrix m;
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) m.cells_[i][j] = cells[i * 5 + j];
  }
  for (int i = 0; i < 5; ++i) {
    if (m.cells_[i][i]) {
      throw ConfigError("filter matrix keeps the tie cell " + std::to_string(i + 1) + "-" +
                        std::to_string(i + 1));
    }
    for (int j = i + 1; j < 5; ++j) {
      if (m.cells_[i][j] != m.cells_[j][i]) {
        throw ConfigError("filter matrix is not symmetric at " + std::to_string(i + 1) +
                          "-" + std::to_string(j + 1));
      }
    }
  }
  return m;
}

bool FilterMatrix::keep(int score_a, int score_b) const {
  if (score_a < 1 || score_a > 5 || score_b < 1 || score_b > 5) {
    throw ValidationError("judge_score", "score pair (" + std::to_string(score_a) + "," +
                                             std::to_string(score_b) + ") outside [1,5]");
  }
  return cells_[score_a - 1][score_b - 1];
}

std::array<bool, 25> FilterMatrix::row_major() const {
  std::array<bool, 25> out{};
  for (int i = 0; i < 5; ++i) {
    for (int j = 0; j < 5; ++j) out[i * 5 + j] = cells_[i][j];
  }
  return out;
}

PairDecision decide_pair(int score_a, int score_b, const FilterMatrix& matrix) {
  PairDecision d;
  d.kept = matrix.keep(score_a, score_b);
  if (d.kept) d.provisional_chosen = score_a > score_b ? Side::kA : Side::kB;
  return d;
}

namespace {

struct ScoredPair {
  JudgeScore a;
  JudgeScore b;
};

ScoredPair score_both(const Triad& triad, const Prompt& prompt, const JudgeClient& judge,
                      CallLog* log) {
  return {judge_score(judge, prompt, triad.response_a, log),
          judge_score(judge, prompt, triad.response_b, log)};
}

Triad apply_scores(const Triad& triad, const ScoredPair& s, const JudgeClient& judge,
                   const FilterMatrix& matrix, RecordStore& store) {
  StagePayload scored;
  scored.judge_score_a = s.a.score;
  scored.judge_score_b = s.b.score;
  scored.meta = {{"judge_id", judge.id()},
                 {"rubric", s.a.rubric},
                 {"raw_reply_a", s.a.raw_reply},
                 {"raw_reply_b", s.b.raw_reply}};
  if (s.b.rubric != s.a.rubric) scored.meta["rubric_b"] = s.b.rubric;
  store.advance_stage(triad.id, Stage::kJudgeScored, scored);

  const PairDecision d = decide_pair(s.a.score, s.b.score, matrix);
  StagePayload filtered;
  filtered.provisional_chosen = d.provisional_chosen;
  return store.advance_stage(triad.id, d.kept ? Stage::kFilterKept : Stage::kFilterDropped,
                             filtered);
}

Prompt prompt_for(const Triad& triad, const RecordStore& store) {
  auto prompt = store.find_prompt(triad.prompt_id);
  if (!prompt) {
    throw NotFoundError("triad " + triad.id + " references unknown prompt " +
                        triad.prompt_id);
  }
  return *prompt;
}

}  // namespace

Triad filter_pair(const std::string& triad_id, const JudgeClient& judge,
                  const FilterMatrix& matrix, RecordStore& store) {
  auto triad = store.find_triad(triad_id);
  if (!triad) throw NotFoundError("unknown triad " + triad_id);
  if (triad->stage != Stage::kGenerated) {
    throw TransitionError("triad " + triad_id + " is " + std::string(to_string(triad->stage)) +
                          ", expected Generated");
  }
  const Prompt prompt = prompt_for(*triad, store);
  const ScoredPair s = score_both(*triad, prompt, judge, nullptr);
  return apply_scores(*triad, s, judge, matrix, store);
}

Step3Result run_step3(const JudgeClient& judge, const FilterMatrix& matrix,
                      RecordStore& store, std::span<const std::string> triad_ids,
                      std::size_t max_in_flight, CallLog* log) {
  std::vector<Triad> work;
  if (triad_ids.empty()) {
    for (auto& t : store.triads()) {
      if (t.stage == Stage::kGenerated) work.push_back(std::move(t));
    }
  } else {
    for (const auto& id : triad_ids) {
      auto t = store.find_triad(id);
      if (!t) throw NotFoundError("unknown triad " + id);
      if (t->stage != Stage::kGenerated) {
        throw TransitionError("triad " + id + " is " + std::string(to_string(t->stage)) +
                              ", expected Generated");
      }
      work.push_back(std::move(*t));
    }
  }

  struct Outcome {
    std::optional<ScoredPair> scores;
    std::string error;
  };
  auto outcomes = parallel_map<Outcome>(
      work.size(), max_in_flight, [&](std::size_t i) -> Outcome {
        const Prompt prompt = prompt_for(work[i], store);
        try {
          return {score_both(work[i], prompt, judge, log), {}};
        } catch (const ConfigError&) {
          throw;
        } catch (const std::exception& e) {
          return {std::nullopt, e.what()};
        }
      });

  Step3Result result;
  for (std::size_t i = 0; i < work.size(); ++i) {
    if (!outcomes[i].scores) {
      result.deferred.push_back(work[i].id);
      result.deferred_reasons.push_back(outcomes[i].error);
      continue;
    }
    Triad t = apply_scores(work[i], *outcomes[i].scores, judge, matrix, store);
    if (t.stage == Stage::kFilterKept) {
      result.kept.push_back(std::move(t));
    } else {
      ++result.dropped;
    }
  }
  result.stage = {kStep3StageName, work.size(), result.kept.size(), result.deferred.size()};
  return result;
}

}  // namespace prefpipe
