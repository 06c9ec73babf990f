// Copyright 2026 The CPR Sandbox Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "cpr/session_server.h"

#include <atomic>
#include <chrono>
#include <thread>

#include <httplib.h>

#include "cpr/error.h"
#include "cpr/resources.h"

namespace cpr {

int http_status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnknownSession:
    case ErrorCode::kUnknownToken:
      return 404;
    case ErrorCode::kSessionFull:
    case ErrorCode::kDuplicateToken:
    case ErrorCode::kWrongPhase:
    case ErrorCode::kExpired:
      return 409;
    default:
      return 400;
  }
}

namespace {

void send_json(httplib::Response& res, const nlohmann::ordered_json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  send_json(res, {{"error", std::string(error_code_name(code))}, {"message", message}},
            http_status_for(code));
}

nlohmann::json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  try {
    return nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, std::string("request body: ") + e.what());
  }
}

template <typename T>
T field(const nlohmann::json& body, const char* name) {
  if (!body.contains(name)) throw Error(ErrorCode::kMalformedRecord, std::string("missing field '") + name + "'");
  try {
    return body.at(name).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kMalformedRecord, std::string("field '") + name + "': " + e.what());
  }
}

std::string query_token(const httplib::Request& req) {
  if (!req.has_param("token")) throw Error(ErrorCode::kUnknownToken, "missing token");
  return req.get_param_value("token");
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, e.code(), e.what());
    } catch (const std::exception& e) {
      send_json(res, {{"error", "internal"}, {"message", e.what()}}, 500);
    }
  };
}

}  // namespace

struct SessionServer::Impl {
  SessionManager& manager;
  Options options;
  httplib::Server server;
  std::thread serve_thread;
  std::thread tick_thread;
  std::atomic<bool> running{false};
  int port = 0;

  Impl(SessionManager& m, Options o) : manager(m), options(std::move(o)) { routes(); }

  void routes() {
    server.Post("/api/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const SessionOptions opts = session_options_from_json(parse_body(req));
      const std::string id = manager.create_session(opts);
      send_json(res, {{"session_id", id}}, 201);
    }));
    server.Post(R"(/api/sessions/([^/]+)/join)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const nlohmann::json body = parse_body(req);
                  std::optional<std::string> token;
                  if (body.contains("token")) token = field<std::string>(body, "token");
                  const auto joined = manager.join(req.matches[1].str(), token);
                  send_json(res, {{"token", joined.token}, {"seat", joined.seat}});
                }));
    server.Get("/api/view", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, manager.view(query_token(req)));
    }));
    server.Get("/api/stream", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string token = query_token(req);
      manager.version(token);
      res.set_header("Cache-Control", "no-cache");
      res.set_chunked_content_provider(
          "text/event-stream",
          [this, token, seen = std::optional<uint64_t>()](size_t, httplib::DataSink& sink) mutable {
            try {
              uint64_t version = manager.version(token);
              if (seen && *seen == version) version = manager.wait_for_update(token, *seen, 1.0);
              if (!running.load()) {
                sink.done();
                return true;
              }
              if (!seen || *seen != version) {
                seen = version;
                const std::string event = "event: view\ndata: " + manager.view(token).dump() + "\n\n";
                if (!sink.write(event.data(), event.size())) return false;
                if (manager.finished(token)) sink.done();
              } else {
                static constexpr char kPing[] = ": ping\n\n";
                if (!sink.write(kPing, sizeof(kPing) - 1)) return false;
              }
              return true;
            } catch (const std::exception&) {
              return false;
            }
          });
    }));
    server.Post("/api/stage", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const nlohmann::json body = parse_body(req);
      manager.stage(field<std::string>(body, "token"), field<int>(body, "amount"));
      send_json(res, {{"ok", true}});
    }));
    server.Post("/api/contribute", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const nlohmann::json body = parse_body(req);
      std::optional<int> round;
      if (body.contains("round")) round = field<int>(body, "round");
      const SubmitAck ack =
          manager.submit_contribution(field<std::string>(body, "token"), field<int>(body, "amount"), round);
      send_json(res, {{"accepted", ack.accepted}, {"duplicate", ack.duplicate}, {"round", ack.round}});
    }));
    server.Post("/api/continue", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const nlohmann::json body = parse_body(req);
      manager.continue_round(field<std::string>(body, "token"));
      send_json(res, {{"ok", true}});
    }));
    server.Post("/api/questionnaire", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const nlohmann::json body = parse_body(req);
      manager.submit_questionnaire(field<std::string>(body, "token"),
                                   field<std::vector<int>>(body, "ratings"));
      send_json(res, {{"ok", true}});
    }));
    server.Get("/api/questionnaire", guarded([](const httplib::Request&, httplib::Response& res) {
      send_json(res, {{"statements", questionnaire_statements()}, {"scale", {1, 5}}});
    }));
    server.Get("/api/admin/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, manager.list_sessions());
    }));
    server.Get(R"(/api/admin/sessions/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, manager.inspect(req.matches[1].str()));
               }));
  }

  void bind() {
    if (options.port == 0) {
      port = server.bind_to_any_port(options.host);
    } else {
      port = server.bind_to_port(options.host, options.port) ? options.port : -1;
    }
    if (port <= 0) {
      throw Error(ErrorCode::kIo, "cannot bind " + options.host + ":" + std::to_string(options.port));
    }
    running = true;
    tick_thread = std::thread([this] {
      while (running.load()) {
        manager.tick();
        std::this_thread::sleep_for(std::chrono::duration<double>(options.tick_seconds));
      }
    });
  }

  void shutdown() {
    if (!running.exchange(false)) return;
    server.stop();
    if (serve_thread.joinable()) serve_thread.join();
    if (tick_thread.joinable()) tick_thread.join();
  }
};

SessionServer::SessionServer(SessionManager& manager, Options options)
    : impl_(std::make_unique<Impl>(manager, std::move(options))) {}

SessionServer::~SessionServer() { impl_->shutdown(); }

int SessionServer::start() {
  impl_->bind();
  impl_->serve_thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return impl_->port;
}

void SessionServer::run() {
  impl_->bind();
  impl_->server.listen_after_bind();
  impl_->shutdown();
}

void SessionServer::stop() { impl_->shutdown(); }

int SessionServer::port() const { return impl_->port; }

}  // namespace cpr
