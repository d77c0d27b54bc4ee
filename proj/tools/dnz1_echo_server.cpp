// Minimal DNZ1 denoiser server backed by the builtin denoisers. Used by the
// transport tests and for running the pipeline against a remote process.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include "ddrmpr/denoise.hpp"
#include "ddrmpr/dnz1.hpp"
#include "ddrmpr/errors.hpp"

namespace {

using namespace ddrmpr;

std::mutex log_mutex;

dnz1::Handler model_handler(const std::string& model, const DenoiserGeometry& geometry,
                            std::size_t schedule_T, bool log) {
  nlohmann::json info = {{"model_id", model},
                         {"geometry", {geometry.height, geometry.width, geometry.channels}},
                         {"schedule_T", schedule_T}};
  const dnz1::Handler echo = dnz1::echo_handler(info.dump());
  std::optional<DenoiserHandle> den;
  if (model != "echo") den = parse_denoiser(model, geometry);
  return [echo, den, log](const dnz1::Request& req) {
    const auto t0 = std::chrono::steady_clock::now();
    dnz1::Response resp;
    if (req.op != dnz1::Op::denoise || !den) {
      resp = echo(req);
    } else {
      std::vector<double> values(req.payload.begin(), req.payload.end());
      DenoiseRequest dr{RealImage(req.height, req.width, req.channels, std::move(values),
                                  ValueRange::symmetric),
                        req.t_index, req.sigma_t, req.alpha_t};
      const RealImage out = den->denoise(dr);
      resp.seq = req.seq;
      resp.payload.assign(out.vector().begin(), out.vector().end());
    }
    if (log && req.op == dnz1::Op::denoise) {
      const double ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      const nlohmann::json line = {{"seq", req.seq}, {"t_index", req.t_index}, {"batch", 1},
                                   {"ms", ms}};
      std::lock_guard lock(log_mutex);
      std::cerr << line.dump() << std::endl;
    }
    return resp;
  };
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DNZ1 denoiser server (builtin models)", "dnz1_echo_server"};
  bool stdio = false, log = false;
  int port = -1;
  std::string host = "127.0.0.1", model = "echo";
  std::size_t height = 0, width = 0, channels = 0, schedule_T = 1000;
  app.add_flag("--stdio", stdio, "Serve one session on stdin/stdout");
  app.add_option("--port", port, "TCP port; 0 picks a free one and prints it");
  app.add_option("--host", host, "IPv4 address to bind");
  app.add_option("--model", model, "echo, identity, gaussian[:W] or shrinkage[:C]");
  app.add_option("--height", height, "Declared input height (0: any)");
  app.add_option("--width", width, "Declared input width (0: any)");
  app.add_option("--channels", channels, "Declared input channels (0: any)");
  app.add_option("--schedule-T", schedule_T, "Schedule length reported by info");
  app.add_flag("--log", log, "JSON log line per denoise request on stderr");
  CLI11_PARSE(app, argc, argv);
  if (stdio == (port >= 0)) {
    std::cerr << "choose exactly one of --stdio or --port\n";
    return 2;
  }
  try {
    const dnz1::Handler handler = model_handler(model, {height, width, channels}, schedule_T, log);
    if (stdio) {
      auto s = dnz1::fd_stream(0, 1);
      dnz1::serve_connection(*s, handler);
      return 0;
    }
    dnz1::TcpListener listener(host, static_cast<std::uint16_t>(port));
    std::cout << "port " << listener.port() << std::endl;
    for (;;) {
      std::shared_ptr<dnz1::ByteStream> conn = listener.accept();
      std::thread([conn, handler] {
        try {
          dnz1::serve_connection(*conn, handler);
        } catch (const std::exception& e) {
          std::lock_guard lock(log_mutex);
          std::cerr << "connection closed: " << e.what() << std::endl;
        }
      }).detach();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
