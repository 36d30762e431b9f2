#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "rlab/engine/backend.hpp"

namespace rlab::engine {

struct Address {
  std::string host = "127.0.0.1";
  int port = 0;
};

// Accepts "host:port" or "remote:host:port".
Address parse_address(std::string_view text);

// Backend speaking the wire protocol to an adapter process over TCP. One
// request at a time per instance.
class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(Address address, int timeout_ms = 60000);
  ~RemoteBackend() override;

  const Capabilities& capabilities() const override { return caps_; }
  RunOutput execute(const RunInputs& inputs, const runtime::Hooks& hooks) const override;
  std::vector<double> project(std::span<const double> vector) const override;

 private:
  nlohmann::json call(const nlohmann::json& request) const;
  void connect() const;
  void disconnect() const;

  Address address_;
  int timeout_ms_;
  Capabilities caps_;
  mutable std::mutex mutex_;
  mutable int fd_ = -1;
  mutable std::string pending_;
};

// TCP server exposing a backend through the wire protocol; one thread per
// connection.
class ProtocolServer {
 public:
  ProtocolServer(const Backend& backend, int port);  // port 0 picks a free port
  ~ProtocolServer();
  ProtocolServer(const ProtocolServer&) = delete;
  ProtocolServer& operator=(const ProtocolServer&) = delete;

  int port() const { return port_; }
  void start();           // accept loop on a background thread
  void serve_forever();   // accept loop on the calling thread
  void stop();

 private:
  void accept_loop();

  const Backend& backend_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::atomic<bool> running_{false};
  std::thread thread_;
  std::mutex workers_mutex_;
  std::vector<std::thread> workers_;
};

}  // namespace rlab::engine
