#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "prefpipe/types.hpp"
#include "prefpipe/util.hpp"

namespace prefpipe {

// Fields written alongside a stage transition.
struct StagePayload {
  std::optional<int> judge_score_a;
  std::optional<int> judge_score_b;
  std::optional<Side> chosen;
  std::optional<Side> provisional_chosen;
  // Extra audit data copied verbatim into the event (rubric, annotator, ...).
  Json meta;
};

// Append-only record store. Every mutation is one JSON line in the backing
// file ("kind": "prompt" | "triad" | "event"); the in-memory state is derived
// from those lines and replaying the file rebuilds it exactly.
//
// Mutations serialize on a single writer lock; readers take a shared lock and
// receive copies.
class RecordStore {
 public:
  // In-memory store, nothing persisted.
  explicit RecordStore(std::uint64_t id_seed = 0);
  // File-backed store. Existing content is replayed first; corrupt lines
  // raise IntegrityError carrying the line number.
  explicit RecordStore(const std::filesystem::path& path,
                       std::uint64_t id_seed = 0);

  RecordStore(const RecordStore&) = delete;
  RecordStore& operator=(const RecordStore&) = delete;

  // Empty ids are assigned here. Returns the stored id.
  std::string append(Prompt prompt);
  std::string append(Triad triad);
  // Events must carry a string "type".
  void append_event(Json event);

  Triad advance_stage(const std::string& triad_id, Stage to,
                      const StagePayload& payload = {});

  std::optional<Prompt> find_prompt(const std::string& id) const;
  std::optional<Triad> find_triad(const std::string& id) const;
  bool has_prompt(const std::string& id) const;

  std::vector<Prompt> prompts() const;
  std::vector<Triad> triads() const;
  std::vector<Json> events() const;
  std::vector<Json> events_of_type(const std::string& type) const;

  std::size_t prompt_count() const;
  std::size_t triad_count() const;

  // Canonical dump of the materialized state; two stores with equal dumps
  // hold the same data.
  Json materialized() const;

  const std::optional<std::filesystem::path>& path() const { return path_; }

  // Rebuilds state from a log stream into this (empty) store without
  // writing anything back.
  void replay(std::istream& in);

 private:
  void apply_line(const Json& record, std::size_t line_no);
  void write_line(const Json& record);
  std::string fresh_id();
  Triad apply_advance(const std::string& triad_id, Stage to,
                      const StagePayload& payload);

  mutable std::shared_mutex mu_;
  std::optional<std::filesystem::path> path_;
  std::ofstream out_;
  IdGenerator ids_;
  std::unordered_set<std::string> used_ids_;
  std::vector<Prompt> prompts_;
  std::unordered_map<std::string, std::size_t> prompt_index_;
  std::vector<Triad> triads_;
  std::unordered_map<std::string, std::size_t> triad_index_;
  std::vector<Json> events_;
};

Json advance_event(const std::string& triad_id, Stage from, Stage to,
                   const StagePayload& payload);

// Exclusive lock file next to a store. The labeling service and batch steps
// each hold one so they never write the same store concurrently.
class StoreLock {
 public:
  explicit StoreLock(const std::filesystem::path& store_path);
  ~StoreLock();
  StoreLock(const StoreLock&) = delete;
  StoreLock& operator=(const StoreLock&) = delete;

  static std::filesystem::path lock_path(const std::filesystem::path& store);

 private:
  std::filesystem::path lock_;
  int fd_ = -1;
};

}  // namespace prefpipe
