#include "ddrmpr/dnz1.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <cstring>
#include <mutex>

#include "ddrmpr/errors.hpp"

namespace ddrmpr::dnz1 {

static_assert(std::endian::native == std::endian::little, "DNZ1 codec assumes little-endian");

namespace {

constexpr std::size_t kMaxElements = std::size_t{1} << 28;
constexpr std::size_t kMaxMessage = std::size_t{1} << 24;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  template <typename T>
  void pod(T v) {
    bytes(&v, sizeof v);
  }
  std::vector<std::uint8_t> buf;
};

template <typename T>
T read_pod(ByteStream& s) {
  T v;
  s.read_exact({reinterpret_cast<std::uint8_t*>(&v), sizeof v});
  return v;
}

std::vector<float> read_floats(ByteStream& s, std::size_t n) {
  std::vector<float> v(n);
  if (n) s.read_exact({reinterpret_cast<std::uint8_t*>(v.data()), n * sizeof(float)});
  return v;
}

std::string read_string(ByteStream& s) {
  const auto len = read_pod<std::uint32_t>(s);
  if (len > kMaxMessage) throw ProtocolError("DNZ1: message too long");
  std::string out(len, '\0');
  if (len) s.read_exact({reinterpret_cast<std::uint8_t*>(out.data()), len});
  return out;
}

void check_magic(ByteStream& s, bool* eof) {
  std::uint8_t m[4];
  if (eof) {
    if (!s.read_exact_or_eof(m)) {
      *eof = true;
      return;
    }
  } else {
    s.read_exact(m);
  }
  if (std::memcmp(m, kMagic, 4) != 0) throw ProtocolError("DNZ1: bad magic");
}

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

// -------------------------------------------------------------------------

class FdStream : public ByteStream {
 public:
  FdStream(int rfd, int wfd, std::chrono::milliseconds timeout, bool owns, bool socket)
      : rfd_(rfd), wfd_(wfd), timeout_(timeout), owns_(owns), socket_(socket) {}

  ~FdStream() override {
    if (!owns_) return;
    ::close(rfd_);
    if (wfd_ != rfd_) ::close(wfd_);
  }

  void write_all(std::span<const std::uint8_t> bytes) override {
    std::size_t off = 0;
    while (off < bytes.size()) {
      const ssize_t n = socket_ ? ::send(wfd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL)
                                : ::write(wfd_, bytes.data() + off, bytes.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(errno_text("DNZ1 write"), 1);
      }
      off += static_cast<std::size_t>(n);
    }
  }

  void read_exact(std::span<std::uint8_t> out) override {
    if (!read_impl(out)) throw TransportError("DNZ1: connection closed", 1);
  }

  bool read_exact_or_eof(std::span<std::uint8_t> out) override { return read_impl(out); }

 protected:
  int rfd_, wfd_;

 private:
  bool read_impl(std::span<std::uint8_t> out) {
    std::size_t off = 0;
    while (off < out.size()) {
      if (timeout_.count() > 0) {
        pollfd p{rfd_, POLLIN, 0};
        const int r = ::poll(&p, 1, static_cast<int>(timeout_.count()));
        if (r == 0) throw TransportError("DNZ1: read timed out", 1);
        if (r < 0) {
          if (errno == EINTR) continue;
          throw TransportError(errno_text("DNZ1 poll"), 1);
        }
      }
      const ssize_t n = ::read(rfd_, out.data() + off, out.size() - off);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError(errno_text("DNZ1 read"), 1);
      }
      if (n == 0) {
        if (off == 0) return false;
        throw TransportError("DNZ1: truncated frame", 1);
      }
      off += static_cast<std::size_t>(n);
    }
    return true;
  }

  std::chrono::milliseconds timeout_;
  bool owns_;
  bool socket_;
};

class ChildStream final : public FdStream {
 public:
  ChildStream(int rfd, int wfd, pid_t pid, std::chrono::milliseconds timeout)
      : FdStream(rfd, wfd, timeout, false, false), pid_(pid) {}
  ~ChildStream() override {
    ::close(wfd_);  // EOF lets the child exit on its own
    ::close(rfd_);
    int status = 0;
    if (::waitpid(pid_, &status, WNOHANG) == 0) {
      ::kill(pid_, SIGTERM);
      ::waitpid(pid_, &status, 0);
    }
  }

 private:
  pid_t pid_;
};

std::pair<std::string, std::string> split_host_port(const std::string& hp) {
  const auto colon = hp.rfind(':');
  if (colon == std::string::npos || colon + 1 == hp.size()) {
    throw ArgumentError("DNZ1 endpoint must be host:port, got '" + hp + "'");
  }
  return {hp.substr(0, colon), hp.substr(colon + 1)};
}

}  // namespace

std::vector<std::uint8_t> encode_request(const Request& req) {
  if (req.op == Op::denoise && req.payload.size() != req.element_count()) {
    throw ShapeError("DNZ1: payload length does not match H*W*C");
  }
  Writer w;
  w.bytes(kMagic, 4);
  w.pod(req.seq);
  w.pod(static_cast<std::uint8_t>(req.op));
  w.pod(req.t_index);
  w.pod(req.sigma_t);
  w.pod(req.alpha_t);
  w.pod(req.height);
  w.pod(req.width);
  w.pod(req.channels);
  if (req.op == Op::denoise) w.bytes(req.payload.data(), req.payload.size() * sizeof(float));
  return std::move(w.buf);
}

std::vector<std::uint8_t> encode_response(const Response& resp, Op op) {
  Writer w;
  w.bytes(kMagic, 4);
  w.pod(resp.seq);
  w.pod(static_cast<std::uint8_t>(resp.status));
  if (resp.status == Status::error || op == Op::info) {
    w.pod(static_cast<std::uint32_t>(resp.body.size()));
    w.bytes(resp.body.data(), resp.body.size());
  } else if (op == Op::denoise) {
    w.bytes(resp.payload.data(), resp.payload.size() * sizeof(float));
  }
  return std::move(w.buf);
}

bool read_request(ByteStream& s, Request& out) {
  bool eof = false;
  check_magic(s, &eof);
  if (eof) return false;
  out.seq = read_pod<std::uint32_t>(s);
  const auto op = read_pod<std::uint8_t>(s);
  out.t_index = read_pod<std::uint32_t>(s);
  out.sigma_t = read_pod<double>(s);
  out.alpha_t = read_pod<double>(s);
  out.height = read_pod<std::uint32_t>(s);
  out.width = read_pod<std::uint32_t>(s);
  out.channels = read_pod<std::uint32_t>(s);
  if (op < 1 || op > 3) throw ProtocolError("DNZ1: unknown opcode " + std::to_string(op));
  out.op = static_cast<Op>(op);
  out.payload.clear();
  if (out.op == Op::denoise) {
    if (out.element_count() > kMaxElements) throw ProtocolError("DNZ1: payload too large");
    out.payload = read_floats(s, out.element_count());
  }
  return true;
}

Response read_response(ByteStream& s, Op op, std::size_t expected_count) {
  check_magic(s, nullptr);
  Response r;
  r.seq = read_pod<std::uint32_t>(s);
  const auto status = read_pod<std::uint8_t>(s);
  if (status > 1) throw ProtocolError("DNZ1: unknown status " + std::to_string(status));
  r.status = static_cast<Status>(status);
  if (r.status == Status::error || op == Op::info) {
    r.body = read_string(s);
  } else if (op == Op::denoise) {
    r.payload = read_floats(s, expected_count);
  }
  return r;
}

std::unique_ptr<ByteStream> connect_tcp(const std::string& host_port,
                                        std::chrono::milliseconds timeout) {
  const auto [host, port] = split_host_port(host_port);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
    throw TransportError("DNZ1: cannot resolve " + host_port + ": " + gai_strerror(rc), 1);
  }
  int fd = -1;
  std::string last = "no addresses";
  for (addrinfo* a = res; a; a = a->ai_next) {
    fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
    last = std::strerror(errno);
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw TransportError("DNZ1: cannot connect to " + host_port + ": " + last, 1);
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return std::make_unique<FdStream>(fd, fd, timeout, true, true);
}

std::unique_ptr<ByteStream> spawn_stdio(const std::string& command,
                                        std::chrono::milliseconds timeout) {
  static std::once_flag sigpipe_once;
  std::call_once(sigpipe_once, [] { ::signal(SIGPIPE, SIG_IGN); });
  int to_child[2], from_child[2];
  if (::pipe(to_child) != 0) throw TransportError(errno_text("DNZ1 pipe"), 1);
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw TransportError(errno_text("DNZ1 pipe"), 1);
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw TransportError(errno_text("DNZ1 fork"), 1);
  if (pid == 0) {
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
  return std::make_unique<ChildStream>(from_child[0], to_child[1], pid, timeout);
}

std::unique_ptr<ByteStream> fd_stream(int read_fd, int write_fd,
                                      std::chrono::milliseconds timeout) {
  return std::make_unique<FdStream>(read_fd, write_fd, timeout, false, false);
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw TransportError(errno_text("DNZ1 socket"), 1);
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    throw ArgumentError("DNZ1: listener host must be an IPv4 address");
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(fd_, 16) != 0) {
    const std::string msg = errno_text("DNZ1 bind");
    ::close(fd_);
    throw TransportError(msg, 1);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpListener::close() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

std::unique_ptr<ByteStream> TcpListener::accept() {
  for (;;) {
    const int c = ::accept(fd_, nullptr, nullptr);
    if (c >= 0) return std::make_unique<FdStream>(c, c, std::chrono::milliseconds{0}, true, true);
    if (errno == EINTR) continue;
    throw TransportError(errno_text("DNZ1 accept"), 1);
  }
}

void serve_connection(ByteStream& s, const Handler& handler) {
  for (;;) {
    Request req;
    try {
      if (!read_request(s, req)) return;
    } catch (const ProtocolError& e) {
      Response err{req.seq, Status::error, {}, e.what()};
      s.write_all(encode_response(err, Op::ping));
      // Only an unknown opcode leaves the header intact; payload length is
      // unknown either way, so the stream cannot be resynchronized.
      return;
    }
    Response resp;
    try {
      resp = handler(req);
      if (req.op == Op::denoise && resp.status == Status::ok &&
          resp.payload.size() != req.element_count()) {
        throw ProtocolError("handler returned a payload of the wrong size");
      }
    } catch (const std::exception& e) {
      resp = Response{req.seq, Status::error, {}, e.what()};
    }
    resp.seq = req.seq;
    s.write_all(encode_response(resp, req.op));
  }
}

Handler echo_handler(std::string info_json) {
  return [info = std::move(info_json)](const Request& req) {
    Response r;
    r.seq = req.seq;
    if (req.op == Op::info) r.body = info;
    if (req.op == Op::denoise) r.payload = req.payload;
    return r;
  };
}

}  // namespace ddrmpr::dnz1
