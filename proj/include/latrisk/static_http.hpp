// Copyright 2026 The latrisk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Serves a directory of static files (the operator console bundle).

#include <memory>
#include <stdexcept>
#include <string>
#include <thread>

#include "httplib.h"

namespace latrisk {

class StaticHttpServer {
 public:
  StaticHttpServer(const std::string& host, int port, const std::string& dir) {
    if (!server_.set_mount_point("/", dir)) {
      throw std::runtime_error("static directory not found: " + dir);
    }
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw std::runtime_error("cannot bind HTTP port " + std::to_string(port));
    thread_ = std::thread([this] { server_.listen_after_bind(); });
  }

  StaticHttpServer(const StaticHttpServer&) = delete;
  StaticHttpServer& operator=(const StaticHttpServer&) = delete;

  ~StaticHttpServer() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }

 private:
  httplib::Server server_;
  int port_ = -1;
  std::thread thread_;
};

}  // namespace latrisk
