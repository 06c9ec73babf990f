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

#ifndef CPR_SESSION_SERVER_H_
#define CPR_SESSION_SERVER_H_

#include <memory>
#include <string>

#include "cpr/error.h"
#include "cpr/session.h"

namespace cpr {

// HTTP front end for a SessionManager.
//
//   POST /api/sessions                       create (SessionOptions JSON)
//   POST /api/sessions/{id}/join             {"token"?} -> {"token","seat"}
//   GET  /api/view?token=...                 client view
//   GET  /api/stream?token=...               server-sent events, one "view" per change
//   POST /api/stage                          {"token","amount"}
//   POST /api/contribute                     {"token","amount","round"?}
//   POST /api/continue                       {"token"}
//   POST /api/questionnaire                  {"token","ratings":[8]}
//   GET  /api/questionnaire                  statements
//   GET  /api/admin/sessions                 list
//   GET  /api/admin/sessions/{id}            inspect
//
// Errors come back as {"error": <code>, "message": ...} with a 4xx status.
class SessionServer {
 public:
  struct Options {
    std::string host = "127.0.0.1";
    int port = 0;  // 0 picks a free port
    double tick_seconds = 0.25;
  };

  SessionServer(SessionManager& manager, Options options);
  ~SessionServer();

  // Binds and serves on a background thread; returns the bound port.
  int start();
  // Serves on the calling thread until stop().
  void run();
  void stop();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

int http_status_for(ErrorCode code);

}  // namespace cpr

#endif  // CPR_SESSION_SERVER_H_
