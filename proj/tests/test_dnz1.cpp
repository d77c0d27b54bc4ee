#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cstring>
#include <functional>
#include <mutex>
#include <thread>

#include <json.hpp>

#include "ddrmpr/ddrm_core.hpp"
#include "ddrmpr/denoise.hpp"
#include "ddrmpr/dnz1.hpp"
#include "ddrmpr/errors.hpp"

using namespace ddrmpr;
using namespace ddrmpr::dnz1;

namespace {

class MemStream final : public ByteStream {
 public:
  explicit MemStream(std::vector<std::uint8_t> in = {}) : in_(std::move(in)) {}
  void write_all(std::span<const std::uint8_t> b) override { out.insert(out.end(), b.begin(), b.end()); }
  void read_exact(std::span<std::uint8_t> o) override {
    if (!read_exact_or_eof(o)) throw TransportError("eof", 1);
  }
  bool read_exact_or_eof(std::span<std::uint8_t> o) override {
    if (pos_ == in_.size()) return false;
    if (pos_ + o.size() > in_.size()) throw TransportError("truncated", 1);
    std::memcpy(o.data(), in_.data() + pos_, o.size());
    pos_ += o.size();
    return true;
  }
  std::vector<std::uint8_t> out;

 private:
  std::vector<std::uint8_t> in_;
  std::size_t pos_ = 0;
};

template <typename T>
void put(std::vector<std::uint8_t>& b, T v) {
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof v);
  b.insert(b.end(), raw, raw + sizeof v);
}

// Runs `session` on every accepted connection until destroyed.
class TestServer {
 public:
  using Session = std::function<void(ByteStream&)>;
  explicit TestServer(Session session) : listener_("127.0.0.1", 0), session_(std::move(session)) {
    acceptor_ = std::thread([this] {
      for (;;) {
        std::unique_ptr<ByteStream> c;
        try {
          c = listener_.accept();
        } catch (const TransportError&) {
          return;
        }
        std::lock_guard lock(mu_);
        sessions_.emplace_back([this, s = std::shared_ptr<ByteStream>(std::move(c))] {
          try {
            session_(*s);
          } catch (const std::exception&) {
          }
        });
      }
    });
  }
  ~TestServer() {
    listener_.close();
    acceptor_.join();
    std::lock_guard lock(mu_);
    for (auto& t : sessions_) t.join();
  }
  std::string endpoint() const { return "127.0.0.1:" + std::to_string(listener_.port()); }

 private:
  TcpListener listener_;
  Session session_;
  std::thread acceptor_;
  std::mutex mu_;
  std::vector<std::thread> sessions_;
};

std::string info_json(std::size_t h, std::size_t w, std::size_t c, std::size_t T) {
  return nlohmann::json{{"model_id", "test"}, {"geometry", {h, w, c}}, {"schedule_T", T}}.dump();
}

TestServer::Session serving(Handler h) {
  return [h = std::move(h)](ByteStream& s) { serve_connection(s, h); };
}

std::vector<float> random_floats(std::size_t n, std::uint64_t seed, float scale) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (float& f : v) f = static_cast<float>(scale * rng.normal());
  return v;
}

Request denoise_request(std::uint32_t seq, std::uint32_t h, std::uint32_t w, std::uint32_t c,
                        std::vector<float> payload) {
  Request r;
  r.seq = seq;
  r.op = Op::denoise;
  r.t_index = 17;
  r.sigma_t = 0.5;
  r.alpha_t = 0.8;
  r.height = h;
  r.width = w;
  r.channels = c;
  r.payload = std::move(payload);
  return r;
}

RealImage float_image(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  const auto f = random_floats(h * w * c, seed, 0.3f);
  RealImage img(h, w, c, ValueRange::symmetric);
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = std::clamp(f[i], -1.0f, 1.0f);
  return img;
}

DenoiseRequest at_sigma(RealImage x, double sigma) {
  return {std::move(x), 100, sigma, alpha_from_sigma(sigma)};
}

}  // namespace

TEST_CASE("request frame layout is little-endian and packed") {
  const Request r = denoise_request(0x01020304, 1, 2, 1, {1.5f, -2.0f});
  std::vector<std::uint8_t> want{'D', 'N', 'Z', '1'};
  put<std::uint32_t>(want, 0x01020304);
  put<std::uint8_t>(want, 1);
  put<std::uint32_t>(want, 17);
  put<double>(want, 0.5);
  put<double>(want, 0.8);
  put<std::uint32_t>(want, 1);
  put<std::uint32_t>(want, 2);
  put<std::uint32_t>(want, 1);
  put<float>(want, 1.5f);
  put<float>(want, -2.0f);
  CHECK(encode_request(r) == want);
  CHECK(want.size() == 41 + 8);

  MemStream s(want);
  Request back;
  REQUIRE(read_request(s, back));
  CHECK(back.seq == r.seq);
  CHECK(back.op == Op::denoise);
  CHECK(back.t_index == 17);
  CHECK(back.sigma_t == 0.5);
  CHECK(back.alpha_t == 0.8);
  CHECK(back.payload == r.payload);
  CHECK_FALSE(read_request(s, back));
}

TEST_CASE("ping and info frames carry no payload") {
  Request p;
  p.op = Op::ping;
  p.seq = 9;
  CHECK(encode_request(p).size() == 41);
  Request bad = denoise_request(1, 2, 2, 1, {1.0f});
  CHECK_THROWS_AS(encode_request(bad), ShapeError);
}

TEST_CASE("response frames round trip") {
  SUBCASE("ok denoise") {
    Response r{5, Status::ok, {0.25f, -1.0f, 3.0f}, {}};
    std::vector<std::uint8_t> want{'D', 'N', 'Z', '1'};
    put<std::uint32_t>(want, 5);
    put<std::uint8_t>(want, 0);
    for (float f : r.payload) put<float>(want, f);
    CHECK(encode_response(r, Op::denoise) == want);
    MemStream s(want);
    const Response back = read_response(s, Op::denoise, 3);
    CHECK(back.seq == 5);
    CHECK(back.payload == r.payload);
  }
  SUBCASE("error message") {
    Response r{6, Status::error, {}, "boom"};
    std::vector<std::uint8_t> want{'D', 'N', 'Z', '1'};
    put<std::uint32_t>(want, 6);
    put<std::uint8_t>(want, 1);
    put<std::uint32_t>(want, 4);
    for (char c : std::string("boom")) want.push_back(static_cast<std::uint8_t>(c));
    CHECK(encode_response(r, Op::denoise) == want);
    MemStream s(want);
    const Response back = read_response(s, Op::denoise, 3);
    CHECK(back.status == Status::error);
    CHECK(back.body == "boom");
  }
  SUBCASE("info body and ping") {
    Response r{7, Status::ok, {}, "{\"model_id\":\"m\"}"};
    MemStream s(encode_response(r, Op::info));
    CHECK(read_response(s, Op::info, 0).body == r.body);
    MemStream p(encode_response(Response{8, Status::ok, {}, {}}, Op::ping));
    const Response pong = read_response(p, Op::ping, 0);
    CHECK(pong.seq == 8);
    CHECK(pong.payload.empty());
  }
}

TEST_CASE("malformed frames are rejected") {
  auto frame = encode_request(denoise_request(1, 1, 1, 1, {0.0f}));
  SUBCASE("bad magic") {
    frame[0] = 'X';
    MemStream s(frame);
    Request r;
    CHECK_THROWS_AS(read_request(s, r), ProtocolError);
  }
  SUBCASE("unknown opcode") {
    frame[8] = 9;
    MemStream s(frame);
    Request r;
    CHECK_THROWS_AS(read_request(s, r), ProtocolError);
  }
  SUBCASE("truncated payload") {
    frame.pop_back();
    MemStream s(frame);
    Request r;
    CHECK_THROWS_AS(read_request(s, r), TransportError);
  }
  SUBCASE("unknown status") {
    auto resp = encode_response(Response{1, Status::ok, {}, {}}, Op::ping);
    resp[8] = 4;
    MemStream s(resp);
    CHECK_THROWS_AS(read_response(s, Op::ping, 0), ProtocolError);
  }
}

TEST_CASE("serve_connection answers in order and survives handler errors") {
  std::vector<std::uint8_t> in;
  for (std::uint32_t seq : {10u, 11u, 12u}) {
    const auto f = encode_request(denoise_request(seq, 1, 2, 1, {static_cast<float>(seq), 0.5f}));
    in.insert(in.end(), f.begin(), f.end());
  }
  MemStream s(in);
  serve_connection(s, [](const Request& r) {
    if (r.seq == 11) throw std::runtime_error("no");
    Response resp;
    resp.payload = r.payload;
    return resp;
  });
  MemStream back(s.out);
  const Response a = read_response(back, Op::denoise, 2);
  const Response b = read_response(back, Op::denoise, 2);
  const Response c = read_response(back, Op::denoise, 2);
  CHECK(a.seq == 10);
  CHECK(a.payload == std::vector<float>{10.0f, 0.5f});
  CHECK(b.seq == 11);
  CHECK(b.status == Status::error);
  CHECK(b.body == "no");
  CHECK(c.seq == 12);
  CHECK(c.status == Status::ok);
}

TEST_CASE("serve_connection reports a wrong-size handler payload") {
  MemStream s(encode_request(denoise_request(3, 1, 2, 1, {1.0f, 2.0f})));
  serve_connection(s, [](const Request&) { return Response{0, Status::ok, {1.0f}, {}}; });
  MemStream back(s.out);
  const Response r = read_response(back, Op::denoise, 2);
  CHECK(r.status == Status::error);
}

TEST_CASE("echo round trip over TCP is bit-exact") {
  TestServer server(serving(echo_handler(info_json(64, 64, 3, 1000))));
  auto s = connect_tcp(server.endpoint(), std::chrono::milliseconds(10000));
  const auto payload = random_floats(3 * 64 * 64, 1, 2.0f);
  s->write_all(encode_request(denoise_request(42, 64, 64, 3, payload)));
  const Response r = read_response(*s, Op::denoise, payload.size());
  CHECK(r.seq == 42);
  CHECK(r.status == Status::ok);
  CHECK(std::memcmp(r.payload.data(), payload.data(), payload.size() * sizeof(float)) == 0);

  Request info;
  info.op = Op::info;
  info.seq = 43;
  s->write_all(encode_request(info));
  const auto j = nlohmann::json::parse(read_response(*s, Op::info, 0).body);
  CHECK(j.at("schedule_T") == 1000);
  CHECK(j.at("geometry") == nlohmann::json({64, 64, 3}));
}

TEST_CASE("echo round trip over a stdio subprocess is bit-exact") {
  auto s = spawn_stdio(std::string(DDRMPR_ECHO_SERVER_PATH) + " --stdio --model echo",
                       std::chrono::milliseconds(10000));
  const auto payload = random_floats(3 * 64 * 64, 2, 2.0f);
  s->write_all(encode_request(denoise_request(1, 64, 64, 3, payload)));
  const Response r = read_response(*s, Op::denoise, payload.size());
  CHECK(r.seq == 1);
  CHECK(std::memcmp(r.payload.data(), payload.data(), payload.size() * sizeof(float)) == 0);
  Request ping;
  ping.op = Op::ping;
  ping.seq = 2;
  s->write_all(encode_request(ping));
  CHECK(read_response(*s, Op::ping, 0).seq == 2);
}

TEST_CASE("remote denoiser over TCP echoes the request image") {
  TestServer server(serving(echo_handler(info_json(0, 0, 0, 1000))));
  const DenoiserHandle d = make_remote_denoiser(server.endpoint(), {8, 8, 1}, 1000);
  CHECK(d.kind() == DenoiserKind::remote);
  CHECK(d.geometry() == DenoiserGeometry{8, 8, 1});
  const RealImage x = float_image(8, 8, 1, 3);
  CHECK(d.denoise(at_sigma(x, 0.5)).vector() == x.vector());

  // Concurrent callers each see their own response.
  std::vector<std::thread> ts;
  std::vector<int> ok(6, 0);
  for (int k = 0; k < 6; ++k) {
    ts.emplace_back([&, k] {
      const RealImage xi = float_image(8, 8, 1, 100 + static_cast<std::uint64_t>(k));
      for (int rep = 0; rep < 5; ++rep) {
        if (d.denoise(at_sigma(xi, 0.1)).vector() != xi.vector()) return;
      }
      ok[static_cast<std::size_t>(k)] = 1;
    });
  }
  for (auto& t : ts) t.join();
  for (int v : ok) CHECK(v == 1);
}

TEST_CASE("remote handshake validates geometry and schedule length") {
  TestServer server(serving(echo_handler(info_json(16, 16, 1, 1000))));
  CHECK(make_remote_denoiser(server.endpoint(), {}, 1000).geometry() == DenoiserGeometry{16, 16, 1});
  CHECK_THROWS_AS(make_remote_denoiser(server.endpoint(), {8, 8, 1}, 1000), ProtocolError);
  CHECK_THROWS_AS(make_remote_denoiser(server.endpoint(), {16, 16, 1}, 500), ProtocolError);
  CHECK_NOTHROW(make_remote_denoiser(server.endpoint(), {16, 16, 1}, 0));
  const DenoiserHandle d = make_remote_denoiser(server.endpoint(), {}, 1000);
  CHECK_THROWS_AS(d.denoise(at_sigma(float_image(8, 8, 1, 1), 0.3)), ShapeError);
}

TEST_CASE("remote denoiser surfaces server errors and sequence mismatches") {
  SUBCASE("server error") {
    const std::string info = info_json(0, 0, 0, 0);
    TestServer server(serving([info](const Request& r) {
      if (r.op == Op::denoise) throw std::runtime_error("model exploded");
      return echo_handler(info)(r);
    }));
    const DenoiserHandle d = make_remote_denoiser(server.endpoint(), {}, 0);
    try {
      d.denoise(at_sigma(float_image(4, 4, 1, 1), 0.2));
      FAIL("expected a protocol error");
    } catch (const ProtocolError& e) {
      CHECK(std::string(e.what()).find("model exploded") != std::string::npos);
    }
  }
  SUBCASE("sequence mismatch") {
    const std::string info = info_json(0, 0, 0, 0);
    TestServer server([info](ByteStream& s) {
      Request r;
      while (read_request(s, r)) {
        Response resp = echo_handler(info)(r);
        resp.seq = r.op == Op::denoise ? r.seq + 7 : r.seq;
        s.write_all(encode_response(resp, r.op));
      }
    });
    const DenoiserHandle d = make_remote_denoiser(server.endpoint(), {}, 0);
    CHECK_THROWS_AS(d.denoise(at_sigma(float_image(4, 4, 1, 1), 0.2)), ProtocolError);
  }
  SUBCASE("malformed info JSON") {
    TestServer server(serving(echo_handler("not json")));
    CHECK_THROWS_AS(make_remote_denoiser(server.endpoint(), {}, 0), ProtocolError);
  }
}

TEST_CASE("transport failures are retried and report the attempt count") {
  std::string endpoint;
  {
    TcpListener l("127.0.0.1", 0);
    endpoint = "127.0.0.1:" + std::to_string(l.port());
  }
  try {
    make_remote_denoiser(endpoint, {}, 0, RemoteOptions{2, std::chrono::milliseconds(1000)});
    FAIL("expected a transport error");
  } catch (const TransportError& e) {
    CHECK(e.attempts() == 3);
  }

  // A server that drops the first connection after the handshake.
  std::atomic<int> connections{0};
  const std::string info = info_json(0, 0, 0, 0);
  TestServer flaky([&, info](ByteStream& s) {
    const int k = connections.fetch_add(1);
    Request r;
    while (read_request(s, r)) {
      if (k == 0 && r.op == Op::denoise) return;
      Response resp = echo_handler(info)(r);
      resp.seq = r.seq;
      s.write_all(encode_response(resp, r.op));
    }
  });
  const DenoiserHandle d = make_remote_denoiser(flaky.endpoint(), {}, 0);
  const RealImage x = float_image(4, 4, 1, 9);
  CHECK(d.denoise(at_sigma(x, 0.2)).vector() == x.vector());
  CHECK(connections.load() == 2);

  CHECK_THROWS_AS(connect_tcp("nocolon", std::chrono::milliseconds(100)), ArgumentError);
}

TEST_CASE("read timeouts count as transport failures") {
  TestServer silent([](ByteStream& s) {
    Request r;
    while (read_request(s, r)) {
    }
  });
  try {
    make_remote_denoiser(silent.endpoint(), {}, 0, RemoteOptions{1, std::chrono::milliseconds(200)});
    FAIL("expected a transport error");
  } catch (const TransportError& e) {
    CHECK(e.attempts() == 2);
  }
}

TEST_CASE("gaussian model server matches the builtin gaussian denoiser") {
  const DenoiserHandle remote = parse_denoiser(
      std::string("stdio:") + DDRMPR_ECHO_SERVER_PATH + " --stdio --model gaussian", {16, 16, 1}, 1000);
  const DenoiserHandle local = make_gaussian_denoiser({16, 16, 1});
  for (double sigma : {0.1, 0.5, 2.0}) {
    const double a = alpha_from_sigma(sigma);
    RealImage x = float_image(16, 16, 1, 4);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] *= std::sqrt(a);
    const RealImage r = remote.denoise(at_sigma(x, sigma));
    const RealImage l = local.denoise(at_sigma(x, sigma));
    double err = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) err = std::max(err, std::abs(r[i] - l[i]));
    CHECK(err < 1e-5);
  }
}

TEST_CASE("stdio server rejects geometry it does not serve") {
  CHECK_THROWS_AS(parse_denoiser(std::string("stdio:") + DDRMPR_ECHO_SERVER_PATH +
                                     " --stdio --model echo --height 8 --width 8 --channels 1",
                                 {16, 16, 1}, 1000),
                  ProtocolError);
  CHECK_THROWS_AS(parse_denoiser(std::string("stdio:") + DDRMPR_ECHO_SERVER_PATH +
                                     " --stdio --model echo --schedule-T 250",
                                 {}, 1000),
                  ProtocolError);
}
