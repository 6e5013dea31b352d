#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "prefpipe/labeling.hpp"
#include "prefpipe/store.hpp"

namespace httplib {
class Server;
}

namespace prefpipe {

struct ServerConfig {
  // Bearer token -> annotator id. When empty, any non-empty token is
  // accepted and used as the annotator id.
  std::map<std::string, std::string> tokens;
  // Directory with the annotation UI bundle, served at "/".
  std::optional<std::filesystem::path> ui_dir;
};

// HTTP+JSON front for a LabelQueue.
//
//   GET  /api/tasks/next   -> {"task": LabelTask | null}
//   POST /api/verdicts     {lease_id, decision, note?} -> {triad_id, stage, chosen}
//   POST /api/leases/renew {lease_id} -> {"task": LabelTask}
//   GET  /api/progress     -> {pending, leased, kept, dropped}
//   GET  /api/funnel       -> FunnelReport
//
// Every /api route needs "Authorization: Bearer <token>". Errors come back as
// {"error": message} with 400/401/404/409/410.
class LabelingServer {
 public:
  LabelingServer(LabelQueue& queue, const RecordStore& store, ServerConfig config);
  ~LabelingServer();

  LabelingServer(const LabelingServer&) = delete;
  LabelingServer& operator=(const LabelingServer&) = delete;

  // Blocking.
  bool listen(const std::string& host, int port);
  // For tests: bind an ephemeral port, then serve on another thread.
  int bind_to_any_port(const std::string& host);
  bool listen_after_bind();
  void wait_until_ready() const;
  void stop();

 private:
  void install_routes();
  std::optional<std::string> authenticate(const std::string& header) const;

  LabelQueue& queue_;
  const RecordStore& store_;
  ServerConfig config_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace prefpipe
