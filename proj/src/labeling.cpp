#include "prefpipe/labeling.hpp"

#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "prefpipe/errors.hpp"
#include "prefpipe/util.hpp"

namespace prefpipe {

namespace {

std::string iso8601(TimePoint t) {
  const std::time_t secs = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

Side side_shown_first(PresentedOrder o) {
  return o == PresentedOrder::kAB ? Side::kA : Side::kB;
}

}  // namespace

std::string_view to_string(PresentedOrder o) {
  return o == PresentedOrder::kAB ? "AB" : "BA";
}

std::string_view to_string(Decision d) {
  switch (d) {
    case Decision::kPreferA:
      return "prefer_a";
    case Decision::kPreferB:
      return "prefer_b";
    case Decision::kTie:
      return "tie";
    case Decision::kDiscard:
      return "discard";
  }
  return "?";
}

Decision translate_decision(std::string_view decision, PresentedOrder shown) {
  if (decision == "prefer_a") return Decision::kPreferA;
  if (decision == "prefer_b") return Decision::kPreferB;
  if (decision == "tie") return Decision::kTie;
  if (decision == "discard") return Decision::kDiscard;
  if (decision == "first" || decision == "second") {
    Side first = side_shown_first(shown);
    Side picked = decision == "first" ? first : (first == Side::kA ? Side::kB : Side::kA);
    return picked == Side::kA ? Decision::kPreferA : Decision::kPreferB;
  }
  throw ValidationError("decision", "unknown decision '" + std::string(decision) + "'");
}

Json to_json(const LabelTask& task) {
  Json j{{"triad_id", task.triad_id},
         {"lease_id", task.lease_id},
         {"lease_expiry", iso8601(task.lease_expiry)},
         {"lease_expiry_unix",
          std::chrono::duration_cast<std::chrono::seconds>(task.lease_expiry.time_since_epoch())
              .count()},
         {"presented_order", to_string(task.presented_order)},
         {"prompt_id", task.prompt_id},
         {"category", task.category},
         {"prompt", task.prompt_text},
         {"first", task.first_text},
         {"second", task.second_text}};
  if (task.first_judge_score) j["first_judge_score"] = *task.first_judge_score;
  if (task.second_judge_score) j["second_judge_score"] = *task.second_judge_score;
  if (task.judge_hint) j["judge_hint"] = *task.judge_hint;
  return j;
}

Json to_json(const LabelProgress& p) {
  return Json{{"pending", p.pending}, {"leased", p.leased}, {"kept", p.kept},
              {"dropped", p.dropped}};
}

// LabelQueue -----------------------------------------------------------------

LabelQueue::LabelQueue(RecordStore& store, LabelingConfig config, Clock clock)
    : store_(store), config_(config), clock_(std::move(clock)), rng_(mix64(config.seed)) {
  refresh();
}

void LabelQueue::refresh() {
  const auto triads = store_.triads();
  std::lock_guard lock(mu_);
  kept_ = 0;
  dropped_ = 0;
  for (const auto& t : triads) {
    if (t.stage == Stage::kHumanKept) ++kept_;
    if (t.stage == Stage::kHumanDropped) ++dropped_;
    if (t.stage != Stage::kFilterKept || position_.count(t.id)) continue;
    position_[t.id] = queue_order_.size();
    pending_.insert(queue_order_.size());
    queue_order_.push_back(t.id);
  }
}

std::string LabelQueue::next_lease_id() {
  std::ostringstream os;
  os << "lease-" << std::hex << std::setfill('0') << std::setw(16) << rng_() << std::setw(16)
     << rng_();
  return os.str();
}

void LabelQueue::reclaim_expired(TimePoint now) {
  for (auto it = leases_.begin(); it != leases_.end();) {
    if (it->second.expiry <= now) {
      pending_.insert(position_.at(it->second.triad_id));
      lease_of_triad_.erase(it->second.triad_id);
      expired_leases_.insert(it->first);
      it = leases_.erase(it);
    } else {
      ++it;
    }
  }
}

LabelTask LabelQueue::make_task(const Lease& lease, const std::string& lease_id) const {
  auto triad = store_.find_triad(lease.triad_id);
  if (!triad) throw NotFoundError("queued triad vanished: " + lease.triad_id);
  auto prompt = store_.find_prompt(triad->prompt_id);
  if (!prompt) throw NotFoundError("triad " + triad->id + " has no prompt");
  const Side first = side_shown_first(lease.order);
  const Side second = first == Side::kA ? Side::kB : Side::kA;
  LabelTask task;
  task.triad_id = triad->id;
  task.lease_id = lease_id;
  task.lease_expiry = lease.expiry;
  task.presented_order = lease.order;
  task.prompt_id = prompt->id;
  task.category = prompt->category;
  task.prompt_text = prompt->text;
  task.first_text = triad->response(first).text;
  task.second_text = triad->response(second).text;
  if (config_.reveal_judge_scores) {
    task.first_judge_score = first == Side::kA ? triad->judge_score_a : triad->judge_score_b;
    task.second_judge_score = first == Side::kA ? triad->judge_score_b : triad->judge_score_a;
    if (triad->provisional_chosen) {
      task.judge_hint = *triad->provisional_chosen == first ? "first" : "second";
    }
  }
  return task;
}

std::optional<LabelTask> LabelQueue::lease_next(const std::string& annotator_id) {
  std::lock_guard lock(mu_);
  const TimePoint now = clock_();
  reclaim_expired(now);
  if (pending_.empty()) return std::nullopt;
  const std::size_t pos = *pending_.begin();
  pending_.erase(pending_.begin());
  Lease lease;
  lease.triad_id = queue_order_[pos];
  lease.annotator_id = annotator_id;
  lease.expiry = now + config_.lease_duration;
  lease.order = (rng_() & 1U) ? PresentedOrder::kBA : PresentedOrder::kAB;
  const std::string id = next_lease_id();
  lease_of_triad_[lease.triad_id] = id;
  auto [it, inserted] = leases_.emplace(id, std::move(lease));
  return make_task(it->second, id);
}

LabelTask LabelQueue::renew(const std::string& lease_id, const std::string& annotator_id) {
  std::lock_guard lock(mu_);
  reclaim_expired(clock_());
  auto it = leases_.find(lease_id);
  if (it == leases_.end()) {
    const bool expired = expired_leases_.count(lease_id) > 0;
    throw LeaseError(expired ? "lease expired: " + lease_id : "unknown lease: " + lease_id,
                     expired);
  }
  if (it->second.annotator_id != annotator_id) {
    throw LeaseError("lease " + lease_id + " belongs to another annotator", false);
  }
  if (it->second.renewals >= config_.max_renewals) {
    throw ConflictError("lease " + lease_id + " already renewed");
  }
  ++it->second.renewals;
  it->second.expiry = clock_() + config_.lease_duration;
  return make_task(it->second, lease_id);
}

Triad LabelQueue::submit(const std::string& lease_id, const std::string& annotator_id,
                         std::string_view decision, const std::string& note) {
  std::lock_guard lock(mu_);
  const TimePoint now = clock_();
  reclaim_expired(now);
  if (spent_leases_.count(lease_id)) {
    throw ConflictError("verdict already submitted on lease " + lease_id);
  }
  auto it = leases_.find(lease_id);
  if (it == leases_.end()) {
    const bool expired = expired_leases_.count(lease_id) > 0;
    throw LeaseError(expired ? "lease expired: " + lease_id : "unknown lease: " + lease_id,
                     expired);
  }
  const Lease lease = it->second;
  if (lease.annotator_id != annotator_id) {
    throw LeaseError("lease " + lease_id + " belongs to another annotator", false);
  }
  const Decision d = translate_decision(decision, lease.order);

  StagePayload payload;
  Stage to = Stage::kHumanDropped;
  if (d == Decision::kPreferA || d == Decision::kPreferB) {
    to = Stage::kHumanKept;
    payload.chosen = d == Decision::kPreferA ? Side::kA : Side::kB;
  }
  payload.meta = {{"annotator_id", annotator_id}, {"lease_id", lease_id}};

  Json verdict{{"type", "verdict"},
               {"triad_id", lease.triad_id},
               {"annotator_id", annotator_id},
               {"decision", to_string(d)},
               {"submitted_decision", std::string(decision)},
               {"presented_order", to_string(lease.order)},
               {"lease_id", lease_id},
               {"submitted_at", iso8601(now)}};
  if (!note.empty()) verdict["note"] = note;

  Triad updated = store_.advance_stage(lease.triad_id, to, payload);
  store_.append_event(std::move(verdict));
  leases_.erase(it);
  lease_of_triad_.erase(lease.triad_id);
  spent_leases_.insert(lease_id);
  (to == Stage::kHumanKept ? kept_ : dropped_)++;
  return updated;
}

LabelProgress LabelQueue::progress() const {
  std::lock_guard lock(mu_);
  // Expired-but-unreclaimed leases count as pending.
  const TimePoint now = clock_();
  std::size_t live = 0;
  for (const auto& [id, lease] : leases_) {
    if (lease.expiry > now) ++live;
  }
  return {pending_.size() + (leases_.size() - live), live, kept_, dropped_};
}

// Export ----------------------------------------------------------------------

Json to_json(const PreferenceExample& e) {
  Json j{{"triad_id", e.triad_id},
         {"prompt_id", e.prompt_id},
         {"prompt", e.prompt},
         {"chosen", e.chosen},
         {"rejected", e.rejected}};
  if (e.chosen_features) j["chosen_features"] = *e.chosen_features;
  if (e.rejected_features) j["rejected_features"] = *e.rejected_features;
  return j;
}

PreferenceExample preference_from_json(const Json& j) {
  PreferenceExample e;
  e.triad_id = j.value("triad_id", "");
  e.prompt_id = j.value("prompt_id", "");
  e.prompt = j.value("prompt", "");
  e.chosen = j.at("chosen").get<std::string>();
  e.rejected = j.at("rejected").get<std::string>();
  if (j.contains("chosen_features")) {
    e.chosen_features = j["chosen_features"].get<std::vector<double>>();
  }
  if (j.contains("rejected_features")) {
    e.rejected_features = j["rejected_features"].get<std::vector<double>>();
  }
  return e;
}

std::vector<PreferenceExample> export_training_set(const RecordStore& store) {
  std::vector<PreferenceExample> out;
  for (const auto& t : store.triads()) {
    if (t.stage != Stage::kHumanKept) continue;
    auto prompt = store.find_prompt(t.prompt_id);
    if (!prompt) throw IntegrityError("triad " + t.id + " references unknown prompt");
    const Side chosen = *t.chosen;
    const Side rejected = chosen == Side::kA ? Side::kB : Side::kA;
    PreferenceExample e;
    e.triad_id = t.id;
    e.prompt_id = t.prompt_id;
    e.prompt = prompt->text;
    e.chosen = t.response(chosen).text;
    e.rejected = t.response(rejected).text;
    out.push_back(std::move(e));
  }
  return out;
}

void write_preference_jsonl(const std::filesystem::path& path,
                            const std::vector<PreferenceExample>& rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IntegrityError("cannot write " + path.string());
  for (const auto& r : rows) out << to_json(r).dump() << '\n';
}

std::vector<PreferenceExample> read_preference_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IntegrityError("cannot read " + path.string());
  std::vector<PreferenceExample> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      rows.push_back(preference_from_json(Json::parse(line)));
    } catch (const std::exception& e) {
      throw IntegrityError(path.string() + " line " + std::to_string(line_no) + ": " +
                           e.what());
    }
  }
  return rows;
}

}  // namespace prefpipe
