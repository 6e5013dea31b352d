#include "prefpipe/store.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <mutex>
#include <sstream>

#include "prefpipe/errors.hpp"

namespace prefpipe {

namespace {

Json opt_to_json(const std::optional<int>& v) { return v ? Json(*v) : Json(); }

}  // namespace

Json advance_event(const std::string& triad_id, Stage from, Stage to,
                   const StagePayload& payload) {
  Json e{{"kind", "event"},
         {"type", "advance"},
         {"triad_id", triad_id},
         {"from", to_string(from)},
         {"to", to_string(to)}};
  if (payload.judge_score_a) e["judge_score_a"] = *payload.judge_score_a;
  if (payload.judge_score_b) e["judge_score_b"] = *payload.judge_score_b;
  if (payload.chosen) e["chosen"] = to_string(*payload.chosen);
  if (payload.provisional_chosen) {
    e["provisional_chosen"] = to_string(*payload.provisional_chosen);
  }
  if (!payload.meta.is_null()) e["meta"] = payload.meta;
  return e;
}

RecordStore::RecordStore(std::uint64_t id_seed) : ids_(id_seed) {}

RecordStore::RecordStore(const std::filesystem::path& path,
                         std::uint64_t id_seed)
    : path_(path), ids_(id_seed) {
  if (std::filesystem::exists(path)) {
    std::ifstream in(path);
    if (!in) throw IntegrityError("cannot read store " + path.string());
    replay(in);
  } else if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  out_.open(path, std::ios::app | std::ios::binary);
  if (!out_) throw IntegrityError("cannot open store for append: " + path.string());
}

void RecordStore::replay(std::istream& in) {
  std::unique_lock lock(mu_);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Json record;
    try {
      record = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw IntegrityError("store line " + std::to_string(line_no) +
                           ": malformed JSON (" + e.what() + ")");
    }
    apply_line(record, line_no);
  }
}

void RecordStore::apply_line(const Json& record, std::size_t line_no) {
  const auto where = [&] { return "store line " + std::to_string(line_no) + ": "; };
  try {
    if (!record.is_object() || !record.contains("kind")) {
      throw IntegrityError(where() + "record without kind");
    }
    const auto kind = record["kind"].get<std::string>();
    if (kind == "prompt") {
      Prompt p = record.get<Prompt>();
      validate(p);
      if (!used_ids_.insert(p.id).second) {
        throw IntegrityError(where() + "duplicate id " + p.id);
      }
      prompt_index_[p.id] = prompts_.size();
      prompts_.push_back(std::move(p));
    } else if (kind == "triad") {
      Triad t = record.get<Triad>();
      validate(t);
      if (!used_ids_.insert(t.id).second) {
        throw IntegrityError(where() + "duplicate id " + t.id);
      }
      triad_index_[t.id] = triads_.size();
      triads_.push_back(std::move(t));
    } else if (kind == "event") {
      if (record.value("type", "") == "advance") {
        StagePayload payload;
        if (record.contains("judge_score_a")) payload.judge_score_a = record["judge_score_a"].get<int>();
        if (record.contains("judge_score_b")) payload.judge_score_b = record["judge_score_b"].get<int>();
        if (record.contains("chosen")) payload.chosen = side_from_string(record["chosen"].get<std::string>());
        if (record.contains("provisional_chosen")) {
          payload.provisional_chosen =
              side_from_string(record["provisional_chosen"].get<std::string>());
        }
        apply_advance(record.at("triad_id").get<std::string>(),
                      stage_from_string(record.at("to").get<std::string>()),
                      payload);
      }
      events_.push_back(record);
    } else {
      throw IntegrityError(where() + "unknown kind '" + kind + "'");
    }
  } catch (const IntegrityError&) {
    throw;
  } catch (const std::exception& e) {
    throw IntegrityError(where() + e.what());
  }
}

void RecordStore::write_line(const Json& record) {
  if (!path_) return;
  out_ << record.dump() << '\n';
  out_.flush();
  if (!out_) throw IntegrityError("write to store failed: " + path_->string());
}

std::string RecordStore::fresh_id() {
  std::string id;
  do {
    id = ids_.next();
  } while (used_ids_.count(id));
  return id;
}

std::string RecordStore::append(Prompt prompt) {
  std::unique_lock lock(mu_);
  if (prompt.id.empty()) prompt.id = fresh_id();
  validate(prompt);
  if (used_ids_.count(prompt.id)) {
    throw ConflictError("id already in store: " + prompt.id);
  }
  Json record = prompt;
  record["kind"] = "prompt";
  write_line(record);
  used_ids_.insert(prompt.id);
  prompt_index_[prompt.id] = prompts_.size();
  prompts_.push_back(std::move(prompt));
  return prompts_.back().id;
}

std::string RecordStore::append(Triad triad) {
  std::unique_lock lock(mu_);
  if (triad.id.empty()) triad.id = fresh_id();
  validate(triad);
  if (used_ids_.count(triad.id)) {
    throw ConflictError("id already in store: " + triad.id);
  }
  Json record = triad;
  record["kind"] = "triad";
  write_line(record);
  used_ids_.insert(triad.id);
  triad_index_[triad.id] = triads_.size();
  triads_.push_back(std::move(triad));
  return triads_.back().id;
}

void RecordStore::append_event(Json event) {
  if (!event.is_object() || !event.contains("type") || !event["type"].is_string()) {
    throw ValidationError("type", "event needs a string type");
  }
  if (event["type"] == "advance") {
    throw ValidationError("type", "advance events are written by advance_stage");
  }
  std::unique_lock lock(mu_);
  event["kind"] = "event";
  write_line(event);
  events_.push_back(std::move(event));
}

Triad RecordStore::apply_advance(const std::string& triad_id, Stage to,
                                 const StagePayload& payload) {
  auto it = triad_index_.find(triad_id);
  if (it == triad_index_.end()) throw NotFoundError("unknown triad " + triad_id);
  Triad next = triads_[it->second];
  if (!transition_allowed(next.stage, to)) {
    throw TransitionError("illegal transition " + std::string(to_string(next.stage)) +
                          " -> " + std::string(to_string(to)) + " for triad " +
                          triad_id);
  }
  // Already-set fields are immutable.
  auto set_once = [&](auto& field, const auto& value, const char* name) {
    if (!value) return;
    if (field && *field != *value) {
      throw TransitionError(std::string(name) + " already recorded for triad " + triad_id);
    }
    field = value;
  };
  set_once(next.judge_score_a, payload.judge_score_a, "judge_score_a");
  set_once(next.judge_score_b, payload.judge_score_b, "judge_score_b");
  set_once(next.provisional_chosen, payload.provisional_chosen, "provisional_chosen");
  if (payload.chosen && to != Stage::kHumanKept) {
    throw TransitionError("chosen may only be set when entering HumanKept");
  }
  next.chosen = payload.chosen;
  next.stage = to;
  validate(next);
  triads_[it->second] = next;
  return next;
}

Triad RecordStore::advance_stage(const std::string& triad_id, Stage to,
                                 const StagePayload& payload) {
  std::unique_lock lock(mu_);
  auto it = triad_index_.find(triad_id);
  if (it == triad_index_.end()) throw NotFoundError("unknown triad " + triad_id);
  const Stage from = triads_[it->second].stage;
  const Triad before = triads_[it->second];
  Triad after = apply_advance(triad_id, to, payload);
  Json event = advance_event(triad_id, from, to, payload);
  try {
    write_line(event);
  } catch (...) {
    triads_[it->second] = before;
    throw;
  }
  events_.push_back(std::move(event));
  return after;
}

std::optional<Prompt> RecordStore::find_prompt(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = prompt_index_.find(id);
  if (it == prompt_index_.end()) return std::nullopt;
  return prompts_[it->second];
}

std::optional<Triad> RecordStore::find_triad(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = triad_index_.find(id);
  if (it == triad_index_.end()) return std::nullopt;
  return triads_[it->second];
}

bool RecordStore::has_prompt(const std::string& id) const {
  std::shared_lock lock(mu_);
  return prompt_index_.count(id) > 0;
}

std::vector<Prompt> RecordStore::prompts() const {
  std::shared_lock lock(mu_);
  return prompts_;
}

std::vector<Triad> RecordStore::triads() const {
  std::shared_lock lock(mu_);
  return triads_;
}

std::vector<Json> RecordStore::events() const {
  std::shared_lock lock(mu_);
  return events_;
}

std::vector<Json> RecordStore::events_of_type(const std::string& type) const {
  std::shared_lock lock(mu_);
  std::vector<Json> out;
  for (const auto& e : events_) {
    if (e.value("type", "") == type) out.push_back(e);
  }
  return out;
}

std::size_t RecordStore::prompt_count() const {
  std::shared_lock lock(mu_);
  return prompts_.size();
}

std::size_t RecordStore::triad_count() const {
  std::shared_lock lock(mu_);
  return triads_.size();
}

Json RecordStore::materialized() const {
  std::shared_lock lock(mu_);
  return Json{{"prompts", prompts_}, {"triads", triads_}, {"events", events_}};
}

std::filesystem::path StoreLock::lock_path(const std::filesystem::path& store) {
  return std::filesystem::path(store.string() + ".lock");
}

StoreLock::StoreLock(const std::filesystem::path& store_path)
    : lock_(lock_path(store_path)) {
  if (lock_.has_parent_path()) std::filesystem::create_directories(lock_.parent_path());
  fd_ = ::open(lock_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd_ < 0) {
    throw ConflictError("store is locked by another process: " + lock_.string());
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd_, pid.data(), pid.size());
}

StoreLock::~StoreLock() {
  if (fd_ >= 0) {
    ::close(fd_);
    std::error_code ec;
    std::filesystem::remove(lock_, ec);
  }
}

}  // namespace prefpipe
