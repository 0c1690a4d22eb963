#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdint>
#include <cstring>
#include <map>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "parm/mlp.hpp"
#include "parm/serving.hpp"
#include "parm/wire.hpp"

namespace parm {

// Length-prefixed framing over a stream socket: u32 little-endian byte count,
// then the frame bytes.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = o.fd_;
      o.fd_ = -1;
    }
    return *this;
  }
  ~Socket() { close(); }

  static Socket connect_to(const std::string& host, std::uint16_t port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw std::runtime_error("socket: cannot create");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd);
      throw std::runtime_error("socket: bad address " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(fd);
      throw std::runtime_error("socket: connect failed to " + host);
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    return Socket(fd);
  }

  bool valid() const { return fd_ >= 0; }

  void send_frame(const Frame& f) {
    const std::vector<std::uint8_t> buf = encode_frame(f);
    const std::uint32_t len = static_cast<std::uint32_t>(buf.size());
    write_all(&len, 4);
    write_all(buf.data(), buf.size());
  }

  // Returns false on orderly shutdown.
  bool recv_frame(Frame* out) {
    std::uint32_t len = 0;
    if (!read_all(&len, 4)) return false;
    if (len < kFrameHeaderSize || len > (1u << 26))
      throw frame_error("frame: implausible length prefix");
    std::vector<std::uint8_t> buf(len);
    if (!read_all(buf.data(), len)) throw frame_error("frame: truncated stream");
    *out = decode_frame(buf);
    return true;
  }

  void close() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  int fd() const { return fd_; }

 private:
  void write_all(const void* data, std::size_t n) {
    const char* p = static_cast<const char*>(data);
    while (n > 0) {
      const ssize_t w = ::send(fd_, p, n, MSG_NOSIGNAL);
      if (w <= 0) throw std::runtime_error("socket: send failed");
      p += w;
      n -= static_cast<std::size_t>(w);
    }
  }

  bool read_all(void* data, std::size_t n) {
    char* p = static_cast<char*>(data);
    std::size_t got = 0;
    while (got < n) {
      const ssize_t r = ::recv(fd_, p + got, n - got, 0);
      if (r == 0) return got == 0 ? false : throw std::runtime_error("socket: eof");
      if (r < 0) throw std::runtime_error("socket: recv failed");
      got += static_cast<std::size_t>(r);
    }
    return true;
  }

  int fd_ = -1;
};

// TCP server around a Frontend. Worker connections open with a Register
// frame (parity flag + row in position) and are then fed envelopes one at a
// time: the worker replies with a Prediction before receiving the next query,
// which is the pull discipline. Client connections just send Query frames and
// receive Prediction frames for their own query ids.
class FrontendServer {
 public:
  FrontendServer(ServingConfig cfg, std::uint16_t port)
      : frontend_(cfg, [this](const Response& r) { route_response(r); }) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw std::runtime_error("server: cannot create socket");
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_ANY);
    addr.sin_port = htons(port);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw std::runtime_error("server: bind failed (port in use?)");
    if (::listen(listen_fd_, 64) != 0) throw std::runtime_error("server: listen failed");
    socklen_t alen = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &alen);
    port_ = ntohs(addr.sin_port);
    frontend_.start_sweeper();
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  ~FrontendServer() { stop(); }

  std::uint16_t port() const { return port_; }
  Frontend& frontend() { return frontend_; }

  void stop() {
    if (stopped_.exchange(true)) return;
    frontend_.shutdown();
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> threads;
    {
      std::lock_guard lock(mu_);
      threads.swap(conn_threads_);
    }
    for (auto& t : threads)
      if (t.joinable()) t.join();
  }

 private:
  void accept_loop() {
    for (;;) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) return;
      std::lock_guard lock(mu_);
      conn_threads_.emplace_back([this, fd] { serve_connection(Socket(fd)); });
    }
  }

  void serve_connection(Socket sock) {
    Frame first;
    try {
      if (!sock.recv_frame(&first)) return;
      if (first.type == MsgType::kShutdown) {
        frontend_.shutdown();
        ::shutdown(listen_fd_, SHUT_RDWR);
        return;
      }
      if (first.type == MsgType::kRegister) {
        worker_loop(std::move(sock), first);
      } else if (first.type == MsgType::kQuery) {
        client_loop(std::move(sock), first);
      }
    } catch (const std::exception&) {
      // connection dropped; pending envelopes were already dispatched at-most-once
    }
  }

  void worker_loop(Socket sock, const Frame& reg) {
    const bool parity = (reg.flags & frame_flags::kParity) != 0;
    const std::size_t row = reg.position;
    for (;;) {
      std::optional<Envelope> env =
          parity ? frontend_.pull_parity(row) : frontend_.pull_original();
      if (!env) return;
      Frame q;
      q.type = MsgType::kQuery;
      q.query_id = env->query_id;
      q.group_id = env->group_id;
      q.position = env->position;
      q.flags = env->parity ? frame_flags::kParity : 0;
      q.payload = env->payload.data;
      sock.send_frame(q);
      Frame reply;
      if (!sock.recv_frame(&reply)) return;
      if (reply.type != MsgType::kPrediction) continue;
      frontend_.on_result(reply.query_id,
                          Tensor({reply.payload.size()}, reply.payload));
    }
  }

  void client_loop(Socket sock, const Frame& first) {
    const int fd = sock.fd();
    handle_client_query(first, fd);
    Frame f;
    while (sock.recv_frame(&f)) {
      if (f.type != MsgType::kQuery) break;
      handle_client_query(f, fd);
    }
    std::lock_guard lock(mu_);
    for (auto it = client_routes_.begin(); it != client_routes_.end();)
      it = it->second == fd ? client_routes_.erase(it) : std::next(it);
  }

  void handle_client_query(const Frame& f, int fd) {
    // hold mu_ across submit so the route exists before any response for this
    // id can reach route_response
    std::lock_guard lock(mu_);
    const std::uint64_t id = frontend_.submit(Tensor({f.payload.size()}, f.payload));
    client_routes_[id] = fd;
  }

  void route_response(const Response& r) {
    int fd;
    {
      std::lock_guard lock(mu_);
      const auto it = client_routes_.find(r.query_id);
      if (it == client_routes_.end()) return;
      fd = it->second;
      client_routes_.erase(it);
    }
    Frame f;
    f.type = MsgType::kPrediction;
    f.query_id = r.query_id;
    if (r.approximate) f.flags |= frame_flags::kApproximate;
    if (r.kind == ResponseKind::kDefault) f.flags |= frame_flags::kDefault;
    f.payload = r.output.data;
    const std::vector<std::uint8_t> buf = encode_frame(f);
    const std::uint32_t len = static_cast<std::uint32_t>(buf.size());
    std::lock_guard lock(send_mu_);
    ::send(fd, &len, 4, MSG_NOSIGNAL);
    ::send(fd, buf.data(), buf.size(), MSG_NOSIGNAL);
  }

  Frontend frontend_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::thread accept_thread_;
  std::mutex mu_;
  std::mutex send_mu_;
  std::map<std::uint64_t, int> client_routes_;
  std::vector<std::thread> conn_threads_;
  std::atomic<bool> stopped_{false};
};

struct RemoteWorkerConfig {
  std::string model_path;
  bool parity = false;
  std::size_t parity_row = 0;
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  double slowdown_p = 0.0;
  double slowdown_ms = 0.0;
  std::uint64_t seed = 0;
};

// Blocking worker process loop: register, then serve queries until the
// frontend disconnects or sends Shutdown. Throws on model load failure.
inline void run_remote_worker(const RemoteWorkerConfig& cfg) {
  const MlpModel model = load_weights(cfg.model_path);
  Socket sock = Socket::connect_to(cfg.host, cfg.port);
  Frame reg;
  reg.type = MsgType::kRegister;
  reg.position = static_cast<std::uint8_t>(cfg.parity_row);
  if (cfg.parity) reg.flags |= frame_flags::kParity;
  sock.send_frame(reg);
  std::mt19937 rng(static_cast<std::uint32_t>(cfg.seed));
  std::bernoulli_distribution slow(cfg.slowdown_p);
  Frame q;
  while (sock.recv_frame(&q)) {
    if (q.type == MsgType::kShutdown) return;
    if (q.type != MsgType::kQuery) continue;
    if (cfg.slowdown_p > 0.0 && slow(rng))
      std::this_thread::sleep_for(
          std::chrono::duration<double, std::milli>(cfg.slowdown_ms));
    const Tensor out = mlp_forward(model, Tensor({q.payload.size()}, q.payload));
    Frame reply;
    reply.type = MsgType::kPrediction;
    reply.query_id = q.query_id;
    reply.group_id = q.group_id;
    reply.position = q.position;
    reply.flags = q.flags;
    reply.payload = out.data;
    sock.send_frame(reply);
  }
}

}  // namespace parm
