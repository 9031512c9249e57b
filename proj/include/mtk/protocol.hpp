#pragma once

// Wire protocol, daemon and snapshot persistence.
//
// Frames are little-endian: "MTKM", u16 version, u8 message tag, body.
// Strings and arrays are u32-length-prefixed; reals are IEEE-754 binary64.
// Disclosed, Config and Ack carry no per-task outputs or weights by
// construction.
//
// Snapshot files: "MTLS", u32 version, counts (u64 n, u32 m, u32 d, then
// u32 task id + u64 l_j per task), the model configuration, u64 epoch, the
// state arrays (symmetric matrices as packed lower triangles), and a trailing
// CRC-32 of everything before it.

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mtk/error.hpp"
#include "mtk/server.hpp"

namespace mtk {

using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint16_t kWireVersion = 1;
inline constexpr std::uint32_t kSnapshotVersion = 1;

namespace msg {

struct SubmitExample {
  TaskId task = 0;
  std::string token;
  std::string key;
  Vector features;
  double y = 0.0;
  double w = 1.0;
  friend bool operator==(const SubmitExample&, const SubmitExample&) = default;
};
struct Ack {
  std::uint64_t epoch = 0;
  UpdateCase kind = UpdateCase::NewInput;
  friend bool operator==(const Ack&, const Ack&) = default;
};
struct GetDisclosed {
  friend bool operator==(const GetDisclosed&, const GetDisclosed&) = default;
};
struct Disclosed {
  DisclosedDB db;
  friend bool operator==(const Disclosed&, const Disclosed&) = default;
};
struct GetTaskCoeffs {
  TaskId task = 0;
  std::string token;
  friend bool operator==(const GetTaskCoeffs&, const GetTaskCoeffs&) = default;
};
struct TaskCoeffs {
  std::uint64_t epoch = 0;
  Vector a;
  std::vector<std::string> keys;  // x̆(h^j) as keys, aligned with a
  friend bool operator==(const TaskCoeffs&, const TaskCoeffs&) = default;
};
struct GetConfig {
  friend bool operator==(const GetConfig&, const GetConfig&) = default;
};
struct Config {
  MixedEffectConfig cfg;
  friend bool operator==(const Config&, const Config&) = default;
};
struct Failure {
  ErrorCode code = ErrorCode::InvalidArgument;
  std::string detail;
  friend bool operator==(const Failure&, const Failure&) = default;
};

}  // namespace msg

using Message = std::variant<msg::SubmitExample, msg::Ack, msg::GetDisclosed, msg::Disclosed, msg::GetTaskCoeffs,
                             msg::TaskCoeffs, msg::GetConfig, msg::Config, msg::Failure>;

Bytes encode(const Message& m);
/// Throws MalformedFrame or UnsupportedVersion.
Message decode(std::span<const std::uint8_t> bytes);

Bytes save_snapshot(const ServerState& state);
/// Throws ChecksumMismatch, UnsupportedVersion or MalformedFrame.
ServerState load_snapshot(std::span<const std::uint8_t> bytes);

void write_file(const std::string& path, std::span<const std::uint8_t> bytes);
Bytes read_file(const std::string& path);

/// Human-readable JSON rendering of a message; debugging aid only.
std::string debug_json(const Message& m);

struct DaemonConfig {
  MixedEffectConfig model;
  std::string host = "127.0.0.1";
  int port = 0;
  std::string snapshot_path;
  std::uint64_t snapshot_every = 0;  // 0: only on explicit save
  std::map<TaskId, std::string> tokens;
};

/// Reads a JSON daemon configuration file.
DaemonConfig load_daemon_config(const std::string& path);

/// Request handler around a Server. Writes are serialized; reads copy under a
/// shared lock.
class Daemon {
 public:
  explicit Daemon(DaemonConfig cfg);
  Daemon(DaemonConfig cfg, ServerState restored);

  Bytes handle(std::span<const std::uint8_t> request);
  Message handle(const Message& request);

  DisclosedDB disclosed() const;
  ServerState state() const;
  void save_snapshot_now() const;
  const DaemonConfig& config() const noexcept { return cfg_; }

 private:
  bool authorized(TaskId task, const std::string& token) const;

  DaemonConfig cfg_;
  mutable std::shared_mutex mu_;
  Server server_;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual Bytes roundtrip(std::span<const std::uint8_t> request) = 0;
};

/// Calls a Daemon in-process, still going through the byte encoding.
class LoopbackTransport final : public Transport {
 public:
  explicit LoopbackTransport(Daemon& d) : daemon_(d) {}
  Bytes roundtrip(std::span<const std::uint8_t> request) override { return daemon_.handle(request); }

 private:
  Daemon& daemon_;
};

/// HTTP transport: POST /rpc with an application/octet-stream body.
class HttpTransport final : public Transport {
 public:
  HttpTransport(std::string host, int port);
  ~HttpTransport() override;
  Bytes roundtrip(std::span<const std::uint8_t> request) override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Serves a Daemon over HTTP on a background thread.
class HttpServer {
 public:
  explicit HttpServer(Daemon& d);
  ~HttpServer();
  /// Binds and starts listening; port 0 picks a free port. Returns the bound port.
  int start(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Typed request helpers for one task's client.
class ServiceClient {
 public:
  ServiceClient(Transport& t, TaskId task, std::string token) : transport_(t), task_(task), token_(std::move(token)) {}

  msg::Ack submit(const InputPoint& x, double y, double w);
  DisclosedDB get_disclosed();
  msg::TaskCoeffs get_task_coeffs();
  MixedEffectConfig get_config();

  TaskId task() const noexcept { return task_; }

 private:
  Message call(const Message& m);

  Transport& transport_;
  TaskId task_;
  std::string token_;
};

}  // namespace mtk
