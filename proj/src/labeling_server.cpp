#include "prefpipe/labeling_server.hpp"

#include <httplib.h>

#include "prefpipe/errors.hpp"
#include "prefpipe/funnel.hpp"

namespace prefpipe {

namespace {

void send_json(httplib::Response& res, int status, const Json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json; charset=utf-8");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, Json{{"error", message}});
}

}  // namespace

LabelingServer::LabelingServer(LabelQueue& queue, const RecordStore& store,
                               ServerConfig config)
    : queue_(queue),
      store_(store),
      config_(std::move(config)),
      server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

LabelingServer::~LabelingServer() { stop(); }

std::optional<std::string> LabelingServer::authenticate(const std::string& header) const {
  static constexpr std::string_view kPrefix = "Bearer ";
  if (header.size() <= kPrefix.size() || header.compare(0, kPrefix.size(), kPrefix) != 0) {
    return std::nullopt;
  }
  const std::string token = header.substr(kPrefix.size());
  if (config_.tokens.empty()) return token;
  auto it = config_.tokens.find(token);
  if (it == config_.tokens.end()) return std::nullopt;
  return it->second;
}

void LabelingServer::install_routes() {
  auto& srv = *server_;

  // Wraps a handler with auth and the error -> status mapping.
  auto guarded = [this](auto body) {
    return [this, body](const httplib::Request& req, httplib::Response& res) {
      auto annotator = authenticate(req.get_header_value("Authorization"));
      if (!annotator) {
        send_error(res, 401, "missing or invalid bearer token");
        return;
      }
      try {
        body(*annotator, req, res);
      } catch (const LeaseError& e) {
        send_error(res, e.expired() ? 410 : 404, e.what());
      } catch (const ConflictError& e) {
        send_error(res, 409, e.what());
      } catch (const TransitionError& e) {
        send_error(res, 409, e.what());
      } catch (const ValidationError& e) {
        send_error(res, 400, e.what());
      } catch (const Json::exception& e) {
        send_error(res, 400, std::string("malformed request: ") + e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  };

  srv.Get("/api/tasks/next",
          guarded([this](const std::string& annotator, const httplib::Request&,
                         httplib::Response& res) {
            auto task = queue_.lease_next(annotator);
            send_json(res, 200, Json{{"task", task ? to_json(*task) : Json()}});
          }));

  srv.Post("/api/verdicts",
           guarded([this](const std::string& annotator, const httplib::Request& req,
                          httplib::Response& res) {
             const Json body = Json::parse(req.body);
             const auto lease_id = body.at("lease_id").get<std::string>();
             const auto decision = body.at("decision").get<std::string>();
             const auto note = body.value("note", std::string{});
             const Triad t = queue_.submit(lease_id, annotator, decision, note);
             send_json(res, 200,
                       Json{{"triad_id", t.id},
                            {"stage", to_string(t.stage)},
                            {"chosen", t.chosen ? Json(to_string(*t.chosen)) : Json()}});
           }));

  srv.Post("/api/leases/renew",
           guarded([this](const std::string& annotator, const httplib::Request& req,
                          httplib::Response& res) {
             const Json body = Json::parse(req.body);
             const auto task = queue_.renew(body.at("lease_id").get<std::string>(), annotator);
             send_json(res, 200, Json{{"task", to_json(task)}});
           }));

  srv.Get("/api/progress",
          guarded([this](const std::string&, const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, to_json(queue_.progress()));
          }));

  srv.Get("/api/funnel",
          guarded([this](const std::string&, const httplib::Request&, httplib::Response& res) {
            send_json(res, 200, Json(report_funnel(store_)));
          }));

  if (config_.ui_dir) srv.set_mount_point("/", config_.ui_dir->string());
}

bool LabelingServer::listen(const std::string& host, int port) {
  return server_->listen(host, port);
}

int LabelingServer::bind_to_any_port(const std::string& host) {
  return server_->bind_to_any_port(host);
}

bool LabelingServer::listen_after_bind() { return server_->listen_after_bind(); }

void LabelingServer::wait_until_ready() const { server_->wait_until_ready(); }

void LabelingServer::stop() {
  if (server_ && server_->is_running()) server_->stop();
}

}  // namespace prefpipe
