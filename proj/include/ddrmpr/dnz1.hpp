#pragma once

// DNZ1: little-endian framed denoiser protocol over TCP or a stdio pipe.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ddrmpr::dnz1 {

inline constexpr char kMagic[4] = {'D', 'N', 'Z', '1'};

enum class Op : std::uint8_t { denoise = 1, ping = 2, info = 3 };
enum class Status : std::uint8_t { ok = 0, error = 1 };

struct Request {
  std::uint32_t seq = 0;
  Op op = Op::ping;
  std::uint32_t t_index = 0;
  double sigma_t = 0.0;
  double alpha_t = 1.0;
  std::uint32_t height = 0, width = 0, channels = 0;
  /// height * width * channels values, HWC interleaved.
  std::vector<float> payload;

  std::size_t element_count() const noexcept {
    return std::size_t{height} * width * channels;
  }
};

/// On ok: denoise carries `payload`, info carries `body` (u32 length + UTF-8
/// JSON), ping carries nothing. On error: `body` is the message.
struct Response {
  std::uint32_t seq = 0;
  Status status = Status::ok;
  std::vector<float> payload;
  std::string body;
};

/// Bidirectional byte stream with blocking exact reads.
class ByteStream {
 public:
  virtual ~ByteStream() = default;
  virtual void write_all(std::span<const std::uint8_t> bytes) = 0;
  /// Fills `out` completely or throws TransportError (EOF, timeout, I/O).
  virtual void read_exact(std::span<std::uint8_t> out) = 0;
  /// Like read_exact, but returns false on a clean EOF before the first byte.
  virtual bool read_exact_or_eof(std::span<std::uint8_t> out) = 0;
};

std::vector<std::uint8_t> encode_request(const Request& req);
/// `op` is the request operation, which fixes the ok-body layout.
std::vector<std::uint8_t> encode_response(const Response& resp, Op op);

/// Reads one request; returns false on clean EOF. Throws ProtocolError on a
/// bad magic or opcode (the stream is then out of sync).
bool read_request(ByteStream& s, Request& out);
/// `expected_count` is the payload length of an ok denoise response.
Response read_response(ByteStream& s, Op op, std::size_t expected_count);

/// Connects to "host:port". Timeout applies to connect and every read.
std::unique_ptr<ByteStream> connect_tcp(const std::string& host_port,
                                        std::chrono::milliseconds timeout);
/// Spawns `/bin/sh -c command` and talks over its stdin/stdout.
std::unique_ptr<ByteStream> spawn_stdio(const std::string& command,
                                        std::chrono::milliseconds timeout);
/// Wraps existing file descriptors (not owned). Timeout 0 blocks forever.
std::unique_ptr<ByteStream> fd_stream(int read_fd, int write_fd,
                                      std::chrono::milliseconds timeout = {});

class TcpListener {
 public:
  /// Port 0 picks an ephemeral port; see port().
  TcpListener(const std::string& host, std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  std::unique_ptr<ByteStream> accept();
  /// Unblocks accept(), which then throws TransportError.
  void close();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Server-side handler; throwing produces a status-1 response.
using Handler = std::function<Response(const Request&)>;

/// Answers frames until EOF. Malformed frames get an error response; a bad
/// magic ends the connection since framing is lost.
void serve_connection(ByteStream& s, const Handler& handler);

/// Handler that answers ping, info (with the given JSON) and echoes denoise
/// payloads unchanged.
Handler echo_handler(std::string info_json);

}  // namespace ddrmpr::dnz1
