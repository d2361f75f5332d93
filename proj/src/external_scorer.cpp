#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <csignal>
#include <cstring>
#include <nlohmann/json.hpp>

#include "uavrelay/errors.hpp"
#include "uavrelay/semantic.hpp"

namespace uavrelay {

namespace {

std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

void set_nonblocking(int fd) {
  const int flags = fcntl(fd, F_GETFL, 0);
  if (flags < 0 || fcntl(fd, F_SETFL, flags | O_NONBLOCK) < 0) {
    throw TransportError(errno_text("fcntl"));
  }
}

}  // namespace

class ExternalScorer::Channel {
 public:
  explicit Channel(const ExternalEndpoint& ep) : timeout_(ep.timeout) {
    std::signal(SIGPIPE, SIG_IGN);
    if (ep.kind == ExternalEndpoint::Kind::kProcess) {
      spawn(ep.command);
    } else {
      connect_tcp(ep.host, ep.port);
    }
    set_nonblocking(read_fd_);
    set_nonblocking(write_fd_);
  }

  ~Channel() {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) close(write_fd_);
    if (read_fd_ >= 0) close(read_fd_);
    if (pid_ > 0) {
      // Closing stdin lets a well-behaved child exit on its own.
      int status = 0;
      for (int i = 0; i < 50; ++i) {
        if (waitpid(pid_, &status, WNOHANG) != 0) return;
        usleep(10000);
      }
      kill(pid_, SIGKILL);
      waitpid(pid_, &status, 0);
    }
  }

  // Writes `payload` and returns the next `expected` complete lines.
  std::vector<std::string> exchange(const std::string& payload,
                                    std::size_t expected) {
    if (broken_) throw TransportError("scorer channel is closed");
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    std::size_t written = 0;
    std::vector<std::string> lines;
    extract_lines(lines, expected);
    while (lines.size() < expected) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) {
        broken_ = true;
        throw TransportError("scorer timed out after " +
                             std::to_string(timeout_.count()) + " ms with " +
                             std::to_string(lines.size()) + "/" +
                             std::to_string(expected) + " responses");
      }
      pollfd fds[2];
      int nfds = 0;
      fds[nfds++] = {read_fd_, POLLIN, 0};
      const bool want_write = written < payload.size();
      if (want_write) {
        if (write_fd_ == read_fd_) {
          fds[0].events |= POLLOUT;
        } else {
          fds[nfds++] = {write_fd_, POLLOUT, 0};
        }
      }
      const int rc = poll(fds, nfds, static_cast<int>(left.count()));
      if (rc < 0) {
        if (errno == EINTR) continue;
        broken_ = true;
        throw TransportError(errno_text("poll"));
      }
      for (int i = 0; i < nfds; ++i) {
        if (want_write && fds[i].fd == write_fd_ &&
            (fds[i].revents & (POLLOUT | POLLERR | POLLHUP))) {
          const ssize_t n = ::write(write_fd_, payload.data() + written,
                                    payload.size() - written);
          if (n < 0 && errno != EAGAIN && errno != EINTR) {
            broken_ = true;
            throw TransportError(errno_text("scorer write failed"));
          }
          if (n > 0) written += static_cast<std::size_t>(n);
        }
        if (fds[i].fd == read_fd_ && (fds[i].revents & (POLLIN | POLLHUP))) {
          char buf[65536];
          const ssize_t n = ::read(read_fd_, buf, sizeof buf);
          if (n == 0) {
            broken_ = true;
            throw TransportError("scorer closed its output after " +
                                 std::to_string(lines.size()) + "/" +
                                 std::to_string(expected) + " responses");
          }
          if (n < 0 && errno != EAGAIN && errno != EINTR) {
            broken_ = true;
            throw TransportError(errno_text("scorer read failed"));
          }
          if (n > 0) buffer_.append(buf, static_cast<std::size_t>(n));
          extract_lines(lines, expected);
        }
      }
    }
    return lines;
  }

 private:
  void extract_lines(std::vector<std::string>& lines, std::size_t expected) {
    std::size_t pos;
    while (lines.size() < expected &&
           (pos = buffer_.find('\n')) != std::string::npos) {
      std::string line = buffer_.substr(0, pos);
      buffer_.erase(0, pos + 1);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(std::move(line));
    }
  }

  void spawn(const std::string& command) {
    if (command.empty()) throw ConfigError("external scorer command is empty");
    int to_child[2];
    int from_child[2];
    if (pipe(to_child) != 0) throw TransportError(errno_text("pipe"));
    if (pipe(from_child) != 0) {
      close(to_child[0]);
      close(to_child[1]);
      throw TransportError(errno_text("pipe"));
    }
    pid_ = fork();
    if (pid_ < 0) throw TransportError(errno_text("fork"));
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    write_fd_ = to_child[1];
    read_fd_ = from_child[0];
  }

  void connect_tcp(const std::string& host, int port) {
    if (port <= 0 || port > 65535) {
      throw ConfigError("external scorer port out of range");
    }
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string service = std::to_string(port);
    if (getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0) {
      throw TransportError("cannot resolve scorer host " + host);
    }
    int fd = -1;
    for (addrinfo* p = res; p; p = p->ai_next) {
      fd = socket(p->ai_family, p->ai_socktype, p->ai_protocol);
      if (fd < 0) continue;
      if (connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
      close(fd);
      fd = -1;
    }
    freeaddrinfo(res);
    if (fd < 0) {
      throw TransportError("cannot connect to scorer at " + host + ":" +
                           service);
    }
    read_fd_ = write_fd_ = fd;
  }

  std::chrono::milliseconds timeout_;
  int read_fd_ = -1;
  int write_fd_ = -1;
  pid_t pid_ = -1;
  bool broken_ = false;
  std::string buffer_;
};

ExternalScorer::ExternalScorer(ExternalEndpoint endpoint, int action_count,
                               int score_star)
    : channel_(std::make_unique<Channel>(endpoint)),
      action_count_(action_count),
      score_star_(score_star) {
  if (endpoint.timeout.count() <= 0) {
    throw ConfigError("external scorer timeout must be positive");
  }
}

ExternalScorer::~ExternalScorer() = default;

std::vector<ScoreResult> ExternalScorer::score_batch(
    std::span<const SerializedState> states) {
  std::string payload;
  const long first_id = next_id_;
  for (const auto& s : states) {
    nlohmann::ordered_json req;
    req["id"] = next_id_++;
    req["instruction"] = s.instruction;
    req["input"] = s.input;
    payload += req.dump();
    payload.push_back('\n');
  }
  const auto lines = channel_->exchange(payload, states.size());

  std::vector<ScoreResult> out(states.size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    ScoreResult& r = out[i];
    const nlohmann::json resp = nlohmann::json::parse(lines[i], nullptr, false);
    const bool framed = !resp.is_discarded() && resp.is_object() &&
                        resp.contains("id") && resp["id"].is_number_integer() &&
                        resp["id"].get<long>() == first_id + static_cast<long>(i) &&
                        resp.contains("output") && resp["output"].is_string();
    r.raw_output = framed ? resp["output"].get<std::string>() : lines[i];
    std::optional<ActionScoreVector> parsed;
    if (framed) parsed = parse_score_output(r.raw_output, action_count_, score_star_);
    if (parsed) {
      r.scores = std::move(*parsed);
    } else {
      r.status = ScoreStatus::kParseError;
      r.scores = neutral_scores(action_count_, score_star_);
    }
  }
  return out;
}

}  // namespace uavrelay
