#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"
#include "rlab/engine/remote.hpp"
#include "rlab/engine/wire.hpp"

namespace rlab::engine {
namespace {

bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    const auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

void serve_connection(const Backend& backend, int fd, const std::atomic<bool>& running) {
  std::string pending;
  char buf[65536];
  while (running) {
    pollfd pfd{fd, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, 200);
    if (ready == 0) continue;
    if (ready < 0 && errno == EINTR) continue;
    if (ready < 0) break;
    const auto n = ::recv(fd, buf, sizeof buf, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    pending.append(buf, static_cast<std::size_t>(n));
    std::size_t nl;
    bool ok = true;
    while (ok && (nl = pending.find('\n')) != std::string::npos) {
      std::string reply = wire::handle_line(backend, std::string_view(pending).substr(0, nl));
      pending.erase(0, nl + 1);
      reply.push_back('\n');
      ok = send_all(fd, reply);
    }
    if (!ok) break;
  }
  ::close(fd);
}

}  // namespace

ProtocolServer::ProtocolServer(const Backend& backend, int port) : backend_(backend) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw IoError(fmt::format("socket: {}", std::strerror(errno)));
  int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<uint16_t>(port));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(listen_fd_, 16) != 0) {
    const std::string err = std::strerror(errno);
    ::close(listen_fd_);
    throw IoError(fmt::format("cannot listen on port {}: {}", port, err));
  }
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

ProtocolServer::~ProtocolServer() {
  stop();
  if (listen_fd_ >= 0) ::close(listen_fd_);
}

void ProtocolServer::start() {
  running_ = true;
  thread_ = std::thread([this] { accept_loop(); });
}

void ProtocolServer::serve_forever() {
  running_ = true;
  accept_loop();
}

void ProtocolServer::stop() {
  running_ = false;
  if (thread_.joinable()) thread_.join();
  std::lock_guard lock(workers_mutex_);
  for (auto& w : workers_) {
    if (w.joinable()) w.join();
  }
  workers_.clear();
}

void ProtocolServer::accept_loop() {
  while (running_) {
    pollfd pfd{listen_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, 200);
    if (ready <= 0) continue;
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    std::lock_guard lock(workers_mutex_);
    workers_.emplace_back(serve_connection, std::cref(backend_), fd, std::cref(running_));
  }
}

}  // namespace rlab::engine
