#include <atomic>
#include <cmath>
#include <mutex>

#include <json.hpp>

#include "ddrmpr/denoise.hpp"
#include "ddrmpr/dnz1.hpp"
#include "ddrmpr/errors.hpp"

namespace ddrmpr {

namespace {

using nlohmann::json;

DenoiserGeometry geometry_from_json(const json& g) {
  if (g.is_array() && g.size() == 3) {
    return {g[0].get<std::size_t>(), g[1].get<std::size_t>(), g[2].get<std::size_t>()};
  }
  if (g.is_object()) {
    return {g.value("H", std::size_t{0}), g.value("W", std::size_t{0}),
            g.value("C", std::size_t{0})};
  }
  if (g.is_null()) return {};
  throw ProtocolError("DNZ1 info: geometry must be [H, W, C]");
}

std::size_t merge_axis(std::size_t client, std::size_t server, const char* axis) {
  if (client && server && client != server) {
    throw ProtocolError(std::string("DNZ1 info: server geometry disagrees on ") + axis);
  }
  return client ? client : server;
}

class RemoteDenoiser final : public Denoiser {
 public:
  RemoteDenoiser(std::string endpoint, RemoteOptions opts)
      : endpoint_(std::move(endpoint)), opts_(opts),
        stdio_(endpoint_.rfind("stdio:", 0) == 0) {
    if (opts_.retries < 0) throw ArgumentError("remote denoiser: retries must be >= 0");
  }

  std::string info() const {
    dnz1::Request req;
    req.op = dnz1::Op::info;
    return exchange(req).body;
  }

  void ping() const {
    dnz1::Request req;
    req.op = dnz1::Op::ping;
    exchange(req);
  }

  RealImage denoise(const DenoiseRequest& r) const override {
    dnz1::Request req;
    req.op = dnz1::Op::denoise;
    req.t_index = static_cast<std::uint32_t>(r.t_index);
    req.sigma_t = r.sigma_t;
    req.alpha_t = r.alpha_t;
    req.height = static_cast<std::uint32_t>(r.x_t.height());
    req.width = static_cast<std::uint32_t>(r.x_t.width());
    req.channels = static_cast<std::uint32_t>(r.x_t.channels());
    req.payload.assign(r.x_t.values().begin(), r.x_t.values().end());
    const dnz1::Response resp = exchange(req);
    std::vector<double> v(resp.payload.begin(), resp.payload.end());
    return RealImage(r.x_t.height(), r.x_t.width(), r.x_t.channels(), std::move(v),
                     ValueRange::symmetric);
  }

 private:
  std::unique_ptr<dnz1::ByteStream> open() const {
    return stdio_ ? dnz1::spawn_stdio(endpoint_.substr(6), opts_.timeout)
                  : dnz1::connect_tcp(endpoint_, opts_.timeout);
  }

  std::unique_ptr<dnz1::ByteStream> acquire() const {
    {
      std::lock_guard lock(pool_mu_);
      if (!idle_.empty()) {
        auto s = std::move(idle_.back());
        idle_.pop_back();
        return s;
      }
    }
    return open();
  }

  void release(std::unique_ptr<dnz1::ByteStream> s) const {
    std::lock_guard lock(pool_mu_);
    idle_.push_back(std::move(s));
  }

  dnz1::Response exchange(dnz1::Request req) const {
    // A stdio child is a single connection; serialize callers on it.
    std::unique_lock<std::mutex> serial;
    if (stdio_) serial = std::unique_lock(stdio_mu_);
    const int attempts = opts_.retries + 1;
    std::string last;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
      req.seq = next_seq_.fetch_add(1);
      std::unique_ptr<dnz1::ByteStream> s;
      dnz1::Response resp;
      try {
        s = acquire();
        s->write_all(dnz1::encode_request(req));
        resp = dnz1::read_response(*s, req.op, req.element_count());
      } catch (const TransportError& e) {
        last = e.what();
        continue;  // the broken stream is dropped
      } catch (const ProtocolError&) {
        throw;  // framing lost; do not resend into an unknown state
      }
      if (resp.seq != req.seq) {
        throw ProtocolError("DNZ1: response sequence id " + std::to_string(resp.seq) +
                            " does not match request " + std::to_string(req.seq));
      }
      release(std::move(s));
      if (resp.status == dnz1::Status::error) {
        throw ProtocolError("DNZ1 server error: " + resp.body);
      }
      return resp;
    }
    throw TransportError("remote denoiser " + endpoint_ + " failed after " +
                             std::to_string(attempts) + " attempts: " + last,
                         attempts);
  }

  std::string endpoint_;
  RemoteOptions opts_;
  bool stdio_;
  mutable std::atomic<std::uint32_t> next_seq_{1};
  mutable std::mutex pool_mu_;
  mutable std::mutex stdio_mu_;
  mutable std::vector<std::unique_ptr<dnz1::ByteStream>> idle_;
};

}  // namespace

DenoiserHandle make_remote_denoiser(const std::string& endpoint, DenoiserGeometry geometry,
                                    std::size_t schedule_T, RemoteOptions options) {
  auto impl = std::make_shared<RemoteDenoiser>(endpoint, options);
  json info;
  try {
    info = json::parse(impl->info());
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("DNZ1 info: malformed JSON: ") + e.what());
  }
  if (!info.is_object()) throw ProtocolError("DNZ1 info: expected a JSON object");
  const std::size_t server_T = info.value("schedule_T", std::size_t{0});
  if (schedule_T && server_T && schedule_T != server_T) {
    throw ProtocolError("DNZ1 info: server schedule_T " + std::to_string(server_T) +
                        " != local " + std::to_string(schedule_T));
  }
  const DenoiserGeometry server = geometry_from_json(info.value("geometry", json()));
  const DenoiserGeometry merged{merge_axis(geometry.height, server.height, "H"),
                                merge_axis(geometry.width, server.width, "W"),
                                merge_axis(geometry.channels, server.channels, "C")};
  const std::string model = info.value("model_id", std::string("unknown"));
  return DenoiserHandle("remote:" + endpoint + "#" + model, DenoiserKind::remote, merged,
                        std::move(impl));
}

}  // namespace ddrmpr
