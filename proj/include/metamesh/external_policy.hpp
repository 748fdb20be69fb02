#pragma once

// Client side of the external-policy wire protocol: line-delimited JSON over
// a child process's stdio or a local (unix-domain) stream socket.
//
//   request  {"obs": [float, ...]}\n
//   reply    {"act": [float, ...]}\n
//
// One request is in flight per connection. Observations are clipped to
// magnitude 10 before sending; actions are saturated to the torque bound on
// receipt. A missed deadline or a malformed reply raises ProtocolError.

#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "metamesh/common.hpp"

namespace metamesh {

inline constexpr double kObservationClip = 10.0;

inline std::vector<double> clip_observation(std::span<const double> obs) {
  std::vector<double> out(obs.begin(), obs.end());
  for (double& v : out) v = std::clamp(v, -kObservationClip, kObservationClip);
  return out;
}

inline double saturate(double torque, double limit) {
  return std::clamp(torque, -limit, limit);
}

/// Byte stream carrying protocol lines.
class PolicyTransport {
 public:
  virtual ~PolicyTransport() = default;
  virtual void write_line(const std::string& line) = 0;
  /// Reads one line (without the newline) or throws ProtocolError once
  /// `deadline` has elapsed.
  virtual std::string read_line(std::chrono::milliseconds deadline) = 0;
};

namespace detail {

inline void write_all(int fd, const std::string& data, bool is_socket) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n =
        is_socket ? ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL)
                  : ::write(fd, data.data() + sent, data.size() - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("policy connection write failed: ") +
                          std::strerror(errno));
    }
    sent += static_cast<std::size_t>(n);
  }
}

class LineReader {
 public:
  std::string read(int fd, std::chrono::milliseconds deadline) {
    using clock = std::chrono::steady_clock;
    const auto until = clock::now() + deadline;
    for (;;) {
      if (auto pos = buffer_.find('\n'); pos != std::string::npos) {
        std::string line = buffer_.substr(0, pos);
        buffer_.erase(0, pos + 1);
        return line;
      }
      const auto left =
          std::chrono::duration_cast<std::chrono::milliseconds>(until - clock::now());
      if (left.count() <= 0)
        throw ProtocolError("policy reply deadline exceeded (" +
                            std::to_string(deadline.count()) + " ms)");
      pollfd pfd{fd, POLLIN, 0};
      const int ready = ::poll(&pfd, 1, static_cast<int>(left.count()));
      if (ready < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
      }
      if (ready == 0) continue;
      char chunk[4096];
      const ssize_t n = ::read(fd, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("policy connection read failed: ") +
                            std::strerror(errno));
      }
      if (n == 0) throw ProtocolError("policy connection closed by peer");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 private:
  std::string buffer_;
};

}  // namespace detail

/// Spawns `/bin/sh -c command` and talks to it over its stdin/stdout.
class ProcessTransport final : public PolicyTransport {
 public:
  explicit ProcessTransport(const std::string& command) {
    ::signal(SIGPIPE, SIG_IGN);
    int to_child[2], from_child[2];
    if (::pipe(to_child) != 0) throw Error("pipe() failed");
    if (::pipe(from_child) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw Error("pipe() failed");
    }
    pid_ = ::fork();
    if (pid_ < 0) throw Error("fork() failed");
    if (pid_ == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  }

  ProcessTransport(const ProcessTransport&) = delete;
  ProcessTransport& operator=(const ProcessTransport&) = delete;

  ~ProcessTransport() override {
    if (write_fd_ >= 0) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    if (pid_ > 0) {
      ::kill(pid_, SIGTERM);
      int status = 0;
      ::waitpid(pid_, &status, 0);
    }
  }

  void write_line(const std::string& line) override {
    detail::write_all(write_fd_, line + "\n", false);
  }

  std::string read_line(std::chrono::milliseconds deadline) override {
    return reader_.read(read_fd_, deadline);
  }

 private:
  pid_t pid_ = -1;
  int write_fd_ = -1;
  int read_fd_ = -1;
  detail::LineReader reader_;
};

/// Connects to a server listening on a unix-domain stream socket.
class UnixSocketTransport final : public PolicyTransport {
 public:
  explicit UnixSocketTransport(const std::string& path) {
    fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
    if (fd_ < 0) throw Error("socket() failed");
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (path.size() >= sizeof(addr.sun_path)) {
      ::close(fd_);
      throw InvalidArgument("unix socket path too long: " + path);
    }
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    if (::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      const std::string reason = std::strerror(errno);
      ::close(fd_);
      throw ProtocolError("cannot connect to policy socket " + path + ": " + reason);
    }
  }

  UnixSocketTransport(const UnixSocketTransport&) = delete;
  UnixSocketTransport& operator=(const UnixSocketTransport&) = delete;

  ~UnixSocketTransport() override {
    if (fd_ >= 0) ::close(fd_);
  }

  void write_line(const std::string& line) override {
    detail::write_all(fd_, line + "\n", true);
  }

  std::string read_line(std::chrono::milliseconds deadline) override {
    return reader_.read(fd_, deadline);
  }

 private:
  int fd_ = -1;
  detail::LineReader reader_;
};

/// Opens a transport from an endpoint string: "stdio:<command>" or
/// "unix:<socket path>".
inline std::unique_ptr<PolicyTransport> open_transport(const std::string& endpoint) {
  if (endpoint.rfind("stdio:", 0) == 0)
    return std::make_unique<ProcessTransport>(endpoint.substr(6));
  if (endpoint.rfind("unix:", 0) == 0)
    return std::make_unique<UnixSocketTransport>(endpoint.substr(5));
  throw InvalidArgument("unknown policy endpoint '" + endpoint +
                        "' (expected stdio:<command> or unix:<path>)");
}

class ExternalPolicyClient {
 public:
  ExternalPolicyClient(std::unique_ptr<PolicyTransport> transport,
                       std::chrono::milliseconds deadline, double torque_limit)
      : transport_(std::move(transport)), deadline_(deadline), torque_limit_(torque_limit) {}

  /// Sends one observation and returns the saturated action.
  std::vector<double> query(std::span<const double> observation, std::size_t action_dim) {
    nlohmann::json request;
    request["obs"] = clip_observation(observation);
    transport_->write_line(request.dump());
    const std::string line = transport_->read_line(deadline_);

    nlohmann::json reply;
    try {
      reply = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw ProtocolError("malformed policy reply: not JSON: '" + line + "'");
    }
    if (!reply.is_object() || !reply.contains("act") || !reply["act"].is_array())
      throw ProtocolError("malformed policy reply: missing \"act\" array");
    const auto& act = reply["act"];
    if (act.size() != action_dim)
      throw ProtocolError("policy reply has " + std::to_string(act.size()) +
                          " actions, expected " + std::to_string(action_dim));
    std::vector<double> out;
    out.reserve(action_dim);
    for (const auto& v : act) {
      if (!v.is_number()) throw ProtocolError("malformed policy reply: non-numeric action");
      const double torque = v.get<double>();
      if (!std::isfinite(torque)) throw ProtocolError("policy reply contains non-finite action");
      out.push_back(saturate(torque, torque_limit_));
    }
    return out;
  }

 private:
  std::unique_ptr<PolicyTransport> transport_;
  std::chrono::milliseconds deadline_;
  double torque_limit_;
};

/// Fixed-size pool of connections to one endpoint. A lease gives its holder
/// exclusive use of one connection until the lease is destroyed.
class ExternalPolicyPool {
 public:
  ExternalPolicyPool(std::string endpoint, std::size_t capacity,
                     std::chrono::milliseconds deadline, double torque_limit)
      : endpoint_(std::move(endpoint)),
        capacity_(std::max<std::size_t>(capacity, 1)),
        deadline_(deadline),
        torque_limit_(torque_limit) {}

  class Lease {
   public:
    Lease(ExternalPolicyPool* pool, std::unique_ptr<ExternalPolicyClient> client)
        : pool_(pool), client_(std::move(client)) {}
    Lease(Lease&&) noexcept = default;
    Lease& operator=(Lease&&) noexcept = default;
    Lease(const Lease&) = delete;
    Lease& operator=(const Lease&) = delete;
    ~Lease() {
      if (pool_ && client_) pool_->release(std::move(client_));
    }
    ExternalPolicyClient& client() { return *client_; }
    /// Drops the connection instead of returning it (after a protocol error
    /// the stream may hold a stale reply).
    void discard() {
      if (pool_ && client_) pool_->forget();
      client_.reset();
    }

   private:
    ExternalPolicyPool* pool_ = nullptr;
    std::unique_ptr<ExternalPolicyClient> client_;
  };

  Lease acquire() {
    std::unique_lock lock(mutex_);
    ready_.wait(lock, [&] { return !idle_.empty() || open_ < capacity_; });
    if (!idle_.empty()) {
      auto client = std::move(idle_.back());
      idle_.pop_back();
      return Lease(this, std::move(client));
    }
    ++open_;
    lock.unlock();
    try {
      return Lease(this, std::make_unique<ExternalPolicyClient>(
                             open_transport(endpoint_), deadline_, torque_limit_));
    } catch (...) {
      forget();
      throw;
    }
  }

  std::size_t capacity() const noexcept { return capacity_; }

 private:
  void release(std::unique_ptr<ExternalPolicyClient> client) {
    {
      std::lock_guard lock(mutex_);
      idle_.push_back(std::move(client));
    }
    ready_.notify_one();
  }

  void forget() {
    {
      std::lock_guard lock(mutex_);
      --open_;
    }
    ready_.notify_one();
  }

  std::string endpoint_;
  std::size_t capacity_;
  std::chrono::milliseconds deadline_;
  double torque_limit_;
  std::mutex mutex_;
  std::condition_variable ready_;
  std::vector<std::unique_ptr<ExternalPolicyClient>> idle_;
  std::size_t open_ = 0;
};

/// Pools keyed by endpoint, shared by all simulations of one run.
class PolicyConnections {
 public:
  explicit PolicyConnections(std::size_t per_endpoint = 1) : per_endpoint_(per_endpoint) {}

  ExternalPolicyPool& pool(const std::string& endpoint, std::chrono::milliseconds deadline,
                           double torque_limit) {
    std::lock_guard lock(mutex_);
    auto& slot = pools_[endpoint];
    if (!slot)
      slot = std::make_unique<ExternalPolicyPool>(endpoint, per_endpoint_, deadline,
                                                  torque_limit);
    return *slot;
  }

 private:
  std::size_t per_endpoint_;
  std::mutex mutex_;
  std::map<std::string, std::unique_ptr<ExternalPolicyPool>> pools_;
};

}  // namespace metamesh
