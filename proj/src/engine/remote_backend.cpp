#include "rlab/engine/remote.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

#include <fmt/format.h>

#include "rlab/common/errors.hpp"
#include "rlab/engine/wire.hpp"

namespace rlab::engine {

Address parse_address(std::string_view text) {
  if (text.starts_with("remote:")) text.remove_prefix(7);
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon + 1 == text.size()) {
    throw ConfigError(fmt::format("backend address '{}' is not host:port", text));
  }
  Address a;
  if (colon > 0) a.host = std::string(text.substr(0, colon));
  const auto port_text = text.substr(colon + 1);
  const auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), a.port);
  if (ec != std::errc() || ptr != port_text.data() + port_text.size() || a.port <= 0 || a.port > 65535) {
    throw ConfigError(fmt::format("bad port in backend address '{}'", text));
  }
  return a;
}

RemoteBackend::RemoteBackend(Address address, int timeout_ms)
    : address_(std::move(address)), timeout_ms_(timeout_ms) {
  const auto info = call({{"version", wire::kProtocolVersion}, {"op", "model_info"}});
  if (info.contains("error")) {
    throw ProtocolError(fmt::format("model_info failed: {}", info["error"].value("message", "")));
  }
  if (info.value("version", 0) != wire::kProtocolVersion) {
    throw ProtocolError(fmt::format("adapter speaks protocol version {}", info.value("version", 0)));
  }
  caps_ = wire::capabilities_from_json(info);
}

RemoteBackend::~RemoteBackend() { disconnect(); }

void RemoteBackend::connect() const {
  if (fd_ >= 0) return;
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const auto port = std::to_string(address_.port);
  if (const int rc = ::getaddrinfo(address_.host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw ProtocolError(fmt::format("cannot resolve {}: {}", address_.host, gai_strerror(rc)));
  }
  int fd = -1;
  for (addrinfo* p = res; p != nullptr; p = p->ai_next) {
    fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) {
    throw ProtocolError(fmt::format("cannot connect to {}:{}", address_.host, address_.port));
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  fd_ = fd;
  pending_.clear();
}

void RemoteBackend::disconnect() const {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
  pending_.clear();
}

nlohmann::json RemoteBackend::call(const nlohmann::json& request) const {
  std::lock_guard lock(mutex_);
  connect();
  std::string line = request.dump();
  line.push_back('\n');
  std::size_t sent = 0;
  while (sent < line.size()) {
    const auto n = ::send(fd_, line.data() + sent, line.size() - sent, MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      disconnect();
      throw ProtocolError("connection lost while sending request");
    }
    sent += static_cast<std::size_t>(n);
  }
  char buf[65536];
  std::size_t nl;
  while ((nl = pending_.find('\n')) == std::string::npos) {
    pollfd pfd{fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, timeout_ms_);
    if (ready == 0) {
      disconnect();
      throw ProtocolError(fmt::format("no response within {} ms", timeout_ms_));
    }
    if (ready < 0) {
      if (errno == EINTR) continue;
      disconnect();
      throw ProtocolError(fmt::format("poll failed: {}", std::strerror(errno)));
    }
    const auto n = ::recv(fd_, buf, sizeof buf, 0);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      disconnect();
      throw ProtocolError("connection closed by adapter");
    }
    pending_.append(buf, static_cast<std::size_t>(n));
  }
  const std::string reply = pending_.substr(0, nl);
  pending_.erase(0, nl + 1);
  try {
    return nlohmann::json::parse(reply);
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolError(fmt::format("malformed response: {}", e.what()));
  }
}

RunOutput RemoteBackend::execute(const RunInputs& inputs, const runtime::Hooks& hooks) const {
  auto request = wire::request_from_hooks(inputs, hooks);
  auto out = wire::run_response_from_json(call(wire::request_to_json(request)));
  if (out.captures.size() != hooks.captures.size()) {
    throw ProtocolError(fmt::format("expected {} captures, adapter returned {}", hooks.captures.size(),
                                    out.captures.size()));
  }
  if (static_cast<int>(out.distribution.size()) != caps_.model.vocab_size) {
    throw ProtocolError("distribution length does not match vocab_size");
  }
  return out;
}

std::vector<double> RemoteBackend::project(std::span<const double> vector) const {
  const auto reply = call({{"version", wire::kProtocolVersion},
                           {"op", "project"},
                           {"vector", wire::encode_vector(vector)}});
  if (reply.contains("error")) {
    throw CapabilityError(fmt::format("project failed: {}", reply["error"].value("message", "")));
  }
  return wire::decode_vector(reply.at("logits").get<std::string>());
}

}  // namespace rlab::engine
