// Eigen must precede httplib.h: <resolv.h> defines a `_res` macro.
#include "mtk/protocol.hpp"

#include <thread>

#include <httplib.h>

namespace mtk {

struct HttpTransport::Impl {
  httplib::Client client;
  Impl(const std::string& host, int port) : client(host, port) {}
};

HttpTransport::HttpTransport(std::string host, int port) : impl_(std::make_unique<Impl>(host, port)) {
  impl_->client.set_keep_alive(true);
}

HttpTransport::~HttpTransport() = default;

Bytes HttpTransport::roundtrip(std::span<const std::uint8_t> request) {
  auto res = impl_->client.Post("/rpc", reinterpret_cast<const char*>(request.data()), request.size(),
                                "application/octet-stream");
  if (!res) throw Error(ErrorCode::Transport, "request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error(ErrorCode::Transport, "HTTP status " + std::to_string(res->status));
  return Bytes(res->body.begin(), res->body.end());
}

struct HttpServer::Impl {
  Daemon& daemon;
  httplib::Server server;
  std::thread thread;
  explicit Impl(Daemon& d) : daemon(d) {}
};

HttpServer::HttpServer(Daemon& d) : impl_(std::make_unique<Impl>(d)) {
  // stop() waits for idle keep-alive connections to time out.
  impl_->server.set_keep_alive_timeout(1);
  impl_->server.Post("/rpc", [this](const httplib::Request& req, httplib::Response& res) {
    const auto* data = reinterpret_cast<const std::uint8_t*>(req.body.data());
    const Bytes reply = impl_->daemon.handle(std::span<const std::uint8_t>(data, req.body.size()));
    res.set_content(std::string(reply.begin(), reply.end()), "application/octet-stream");
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw Error(ErrorCode::Transport, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::stop() {
  if (impl_->thread.joinable()) {
    impl_->server.stop();
    impl_->thread.join();
  }
}

}  // namespace mtk
