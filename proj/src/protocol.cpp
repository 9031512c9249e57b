#include "mtk/protocol.hpp"

#include <filesystem>
#include <fstream>
#include <iterator>
#include <mutex>

#include <json.hpp>
#include <zlib.h>

#include "wire.hpp"

namespace mtk {

namespace wire {

void put_input(Writer& w, const InputPoint& x) {
  w.str(x.key);
  w.reals(x.features);
}

InputPoint get_input(Reader& r) {
  InputPoint x;
  x.key = r.str();
  x.features = r.reals();
  return x;
}

namespace {

void put_kernel(Writer& w, const KernelSpec& k) {
  w.u8(static_cast<std::uint8_t>(k.variant));
  if (k.variant == KernelVariant::LookupTable) {
    const LookupTable& t = *k.table;
    w.count(t.keys().size());
    for (const auto& key : t.keys()) w.str(key);
    for (double v : t.values().packed()) w.f64(v);
  }
}

KernelSpec get_kernel(Reader& r) {
  const std::uint8_t v = r.u8();
  if (v > static_cast<std::uint8_t>(KernelVariant::LookupTable)) Reader::malformed("unknown kernel variant");
  KernelSpec k;
  k.variant = static_cast<KernelVariant>(v);
  if (k.variant == KernelVariant::LookupTable) {
    const std::size_t n = r.count(4);
    std::vector<std::string> keys;
    keys.reserve(n);
    for (std::size_t i = 0; i < n; ++i) keys.push_back(r.str());
    std::vector<double> packed = r.reals_exact(SymMatrix::offset(n));
    try {
      k.table = std::make_shared<const LookupTable>(std::move(keys), SymMatrix::from_packed(n, std::move(packed)));
    } catch (const Error& e) {
      Reader::malformed(std::string("invalid lookup table: ") + e.what());
    }
  }
  return k;
}

}  // namespace

void put_config(Writer& w, const MixedEffectConfig& cfg) {
  w.f64(cfg.alpha);
  w.f64(cfg.lambda);
  put_kernel(w, cfg.kbar);
  put_kernel(w, cfg.ktilde_default);
  w.count(cfg.ktilde_overrides.size());
  for (const auto& [task, k] : cfg.ktilde_overrides) {
    w.u32(task);
    put_kernel(w, k);
  }
  w.count(cfg.bias.terms.size());
  for (const auto& t : cfg.bias.terms) {
    w.u8(static_cast<std::uint8_t>(t.kind));
    w.u32(t.feature);
  }
}

MixedEffectConfig get_config(Reader& r) {
  MixedEffectConfig cfg;
  cfg.alpha = r.f64();
  cfg.lambda = r.f64();
  cfg.kbar = get_kernel(r);
  cfg.ktilde_default = get_kernel(r);
  const std::size_t n_over = r.count(5);
  for (std::size_t i = 0; i < n_over; ++i) {
    const TaskId task = r.u32();
    if (!cfg.ktilde_overrides.emplace(task, get_kernel(r)).second) Reader::malformed("duplicate kernel override");
  }
  const std::size_t d = r.count(5);
  for (std::size_t i = 0; i < d; ++i) {
    BiasTerm t;
    const std::uint8_t kind = r.u8();
    if (kind > static_cast<std::uint8_t>(BiasTerm::Kind::Feature)) Reader::malformed("unknown bias term kind");
    t.kind = static_cast<BiasTerm::Kind>(kind);
    t.feature = r.u32();
    cfg.bias.terms.push_back(t);
  }
  return cfg;
}

}  // namespace wire

namespace {

using wire::Reader;
using wire::Writer;

constexpr std::uint8_t kMagic[4] = {'M', 'T', 'K', 'M'};
constexpr std::uint8_t kSnapMagic[4] = {'M', 'T', 'L', 'S'};

enum class Tag : std::uint8_t {
  SubmitExample = 1,
  Ack = 2,
  GetDisclosed = 3,
  Disclosed = 4,
  GetTaskCoeffs = 5,
  TaskCoeffs = 6,
  GetConfig = 7,
  Config = 8,
  Failure = 9,
};

void put_disclosed(Writer& w, const DisclosedDB& db) {
  if (db.ycheck.size() != db.n() || db.H.order() != db.n()) throw Error(ErrorCode::ShapeMismatch, "disclosed arrays disagree with n");
  w.u64(db.epoch);
  w.count(db.n());
  for (const auto& x : db.xcheck) wire::put_input(w, x);
  for (double v : db.ycheck) w.f64(v);
  for (double v : db.H.packed()) w.f64(v);
}

DisclosedDB get_disclosed(Reader& r) {
  DisclosedDB db;
  db.epoch = r.u64();
  const std::size_t n = r.count(8);
  db.xcheck.reserve(n);
  for (std::size_t i = 0; i < n; ++i) db.xcheck.push_back(wire::get_input(r));
  db.ycheck = r.reals_exact(n);
  db.H = SymMatrix::from_packed(n, r.reals_exact(SymMatrix::offset(n)));
  return db;
}

struct Encoder {
  Writer& w;
  void operator()(const msg::SubmitExample& m) {
    w.u8(static_cast<std::uint8_t>(Tag::SubmitExample));
    w.u32(m.task);
    w.str(m.token);
    w.str(m.key);
    w.reals(m.features);
    w.f64(m.y);
    w.f64(m.w);
  }
  void operator()(const msg::Ack& m) {
    w.u8(static_cast<std::uint8_t>(Tag::Ack));
    w.u64(m.epoch);
    w.u8(static_cast<std::uint8_t>(m.kind));
  }
  void operator()(const msg::GetDisclosed&) { w.u8(static_cast<std::uint8_t>(Tag::GetDisclosed)); }
  void operator()(const msg::Disclosed& m) {
    w.u8(static_cast<std::uint8_t>(Tag::Disclosed));
    put_disclosed(w, m.db);
  }
  void operator()(const msg::GetTaskCoeffs& m) {
    w.u8(static_cast<std::uint8_t>(Tag::GetTaskCoeffs));
    w.u32(m.task);
    w.str(m.token);
  }
  void operator()(const msg::TaskCoeffs& m) {
    w.u8(static_cast<std::uint8_t>(Tag::TaskCoeffs));
    w.u64(m.epoch);
    w.reals(m.a);
    w.count(m.keys.size());
    for (const auto& k : m.keys) w.str(k);
  }
  void operator()(const msg::GetConfig&) { w.u8(static_cast<std::uint8_t>(Tag::GetConfig)); }
  void operator()(const msg::Config& m) {
    w.u8(static_cast<std::uint8_t>(Tag::Config));
    wire::put_config(w, m.cfg);
  }
  void operator()(const msg::Failure& m) {
    w.u8(static_cast<std::uint8_t>(Tag::Failure));
    w.u16(static_cast<std::uint16_t>(m.code));
    w.str(m.detail);
  }
};

}  // namespace

Bytes encode(const Message& m) {
  Writer w;
  w.raw(kMagic);
  w.u16(kWireVersion);
  std::visit(Encoder{w}, m);
  return std::move(w.bytes());
}

Message decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  for (std::uint8_t c : kMagic) {
    if (r.u8() != c) Reader::malformed("bad frame magic");
  }
  const std::uint16_t version = r.u16();
  if (version != kWireVersion) throw Error(ErrorCode::UnsupportedVersion, "wire version " + std::to_string(version));
  Message out;
  switch (static_cast<Tag>(r.u8())) {
    case Tag::SubmitExample: {
      msg::SubmitExample m;
      m.task = r.u32();
      m.token = r.str();
      m.key = r.str();
      m.features = r.reals();
      m.y = r.f64();
      m.w = r.f64();
      out = std::move(m);
      break;
    }
    case Tag::Ack: {
      msg::Ack m;
      m.epoch = r.u64();
      const std::uint8_t kind = r.u8();
      if (kind < 1 || kind > 3) Reader::malformed("unknown update case");
      m.kind = static_cast<UpdateCase>(kind);
      out = m;
      break;
    }
    case Tag::GetDisclosed:
      out = msg::GetDisclosed{};
      break;
    case Tag::Disclosed:
      out = msg::Disclosed{get_disclosed(r)};
      break;
    case Tag::GetTaskCoeffs: {
      msg::GetTaskCoeffs m;
      m.task = r.u32();
      m.token = r.str();
      out = std::move(m);
      break;
    }
    case Tag::TaskCoeffs: {
      msg::TaskCoeffs m;
      m.epoch = r.u64();
      m.a = r.reals();
      const std::size_t n = r.count(4);
      if (n != m.a.size()) Reader::malformed("task coefficients and keys differ in length");
      for (std::size_t i = 0; i < n; ++i) m.keys.push_back(r.str());
      out = std::move(m);
      break;
    }
    case Tag::GetConfig:
      out = msg::GetConfig{};
      break;
    case Tag::Config:
      out = msg::Config{wire::get_config(r)};
      break;
    case Tag::Failure: {
      msg::Failure m;
      const std::uint16_t code = r.u16();
      if (code > static_cast<std::uint16_t>(ErrorCode::Io)) Reader::malformed("unknown error code");
      m.code = static_cast<ErrorCode>(code);
      m.detail = r.str();
      out = std::move(m);
      break;
    }
    default:
      Reader::malformed("unknown message tag");
  }
  r.expect_end();
  return out;
}

Bytes save_snapshot(const ServerState& s) {
  Writer w;
  w.raw(kSnapMagic);
  w.u32(kSnapshotVersion);
  const std::size_t n = s.disclosed.n();
  const std::size_t d = s.factors.M.cols();
  w.u64(n);
  w.u32(static_cast<std::uint32_t>(s.tasks.size()));
  w.u32(static_cast<std::uint32_t>(d));
  for (const auto& [j, t] : s.tasks) {
    w.u32(j);
    w.u64(t.size());
  }
  wire::put_config(w, s.cfg);
  w.u64(s.disclosed.epoch);
  for (const auto& x : s.disclosed.xcheck) wire::put_input(w, x);
  for (double v : s.disclosed.ycheck) w.f64(v);
  for (double v : s.disclosed.H.packed()) w.f64(v);
  for (double v : s.factors.L.packed()) w.f64(v);
  for (double v : s.factors.D.values()) w.f64(v);
  for (double v : s.factors.M.values()) w.f64(v);
  for (const auto& [j, t] : s.tasks) {
    for (std::size_t h : t.h) w.u64(h);
    for (double v : t.y) w.f64(v);
    for (double v : t.w) w.f64(v);
    for (double v : t.R.packed()) w.f64(v);
  }
  auto& bytes = w.bytes();
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), bytes.data(), static_cast<uInt>(bytes.size()));
  w.u32(static_cast<std::uint32_t>(crc));
  return std::move(bytes);
}

ServerState load_snapshot(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12) Reader::malformed("snapshot too short");
  const auto body = bytes.first(bytes.size() - 4);
  const uLong crc = crc32(crc32(0L, Z_NULL, 0), body.data(), static_cast<uInt>(body.size()));
  Reader tail(bytes.last(4));
  if (tail.u32() != static_cast<std::uint32_t>(crc)) throw Error(ErrorCode::ChecksumMismatch, "snapshot checksum mismatch");

  Reader r(body);
  for (std::uint8_t c : kSnapMagic) {
    if (r.u8() != c) Reader::malformed("bad snapshot magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kSnapshotVersion) throw Error(ErrorCode::UnsupportedVersion, "snapshot version " + std::to_string(version));

  ServerState s;
  const std::uint64_t n64 = r.u64();
  if (n64 > r.remaining()) Reader::malformed("unique input count exceeds file");
  const auto n = static_cast<std::size_t>(n64);
  const std::size_t m = r.u32();
  const std::size_t d = r.u32();
  if (m > r.remaining() / 12) Reader::malformed("task count exceeds file");
  std::vector<std::pair<TaskId, std::size_t>> sizes;
  for (std::size_t i = 0; i < m; ++i) {
    const TaskId j = r.u32();
    const std::uint64_t l = r.u64();
    if (l > n) Reader::malformed("task size exceeds unique input count");
    sizes.emplace_back(j, static_cast<std::size_t>(l));
  }
  s.cfg = wire::get_config(r);
  if (s.cfg.bias.dim() != d) Reader::malformed("bias dimension disagrees with configuration");
  s.disclosed.epoch = r.u64();
  for (std::size_t i = 0; i < n; ++i) s.disclosed.xcheck.push_back(wire::get_input(r));
  s.disclosed.ycheck = r.reals_exact(n);
  s.disclosed.H = SymMatrix::from_packed(n, r.reals_exact(SymMatrix::offset(n)));
  s.factors.L = UnitLowerFactor::from_packed(n, r.reals_exact(n == 0 ? 0 : n * (n - 1) / 2));
  s.factors.D = DiagonalFactor(r.reals_exact(n));
  s.factors.M = BiasMap::from_values(n, d, r.reals_exact(n * d));
  for (const auto& [j, l] : sizes) {
    TaskState t;
    if (l > r.remaining() / 8) Reader::malformed("task arrays exceed file");
    for (std::size_t i = 0; i < l; ++i) t.h.push_back(static_cast<std::size_t>(r.u64()));
    t.y = r.reals_exact(l);
    t.w = r.reals_exact(l);
    t.R = SymMatrix::from_packed(l, r.reals_exact(SymMatrix::offset(l)));
    if (!s.tasks.emplace(j, std::move(t)).second) Reader::malformed("duplicate task id");
  }
  r.expect_end();
  return s;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot open '" + tmp + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "failed writing '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot move snapshot into place: " + ec.message());
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

namespace {

nlohmann::json kernel_json(const KernelSpec& k) {
  static const char* names[] = {"rbf_on_tags", "linear_on_tags", "lookup_table"};
  nlohmann::json j = {{"variant", names[static_cast<int>(k.variant)]}};
  if (k.table) j["keys"] = k.table->keys();
  return j;
}

nlohmann::json config_json(const MixedEffectConfig& cfg) {
  nlohmann::json j = {{"alpha", cfg.alpha}, {"lambda", cfg.lambda}, {"kbar", kernel_json(cfg.kbar)},
                      {"ktilde", kernel_json(cfg.ktilde_default)}, {"bias_dim", cfg.bias.dim()}};
  for (const auto& [task, k] : cfg.ktilde_overrides) j["ktilde_overrides"][std::to_string(task)] = kernel_json(k);
  return j;
}

struct JsonDump {
  nlohmann::json operator()(const msg::SubmitExample& m) const {
    return {{"type", "SubmitExample"}, {"task", m.task}, {"key", m.key}, {"features", m.features}, {"y", m.y}, {"w", m.w}};
  }
  nlohmann::json operator()(const msg::Ack& m) const {
    return {{"type", "Ack"}, {"epoch", m.epoch}, {"case", static_cast<int>(m.kind)}};
  }
  nlohmann::json operator()(const msg::GetDisclosed&) const { return {{"type", "GetDisclosed"}}; }
  nlohmann::json operator()(const msg::Disclosed& m) const {
    nlohmann::json keys = nlohmann::json::array();
    for (const auto& x : m.db.xcheck) keys.push_back(x.key);
    return {{"type", "Disclosed"}, {"epoch", m.db.epoch}, {"n", m.db.n()}, {"keys", keys},
            {"ycheck", m.db.ycheck}, {"H_packed", std::vector<double>(m.db.H.packed().begin(), m.db.H.packed().end())}};
  }
  nlohmann::json operator()(const msg::GetTaskCoeffs& m) const { return {{"type", "GetTaskCoeffs"}, {"task", m.task}}; }
  nlohmann::json operator()(const msg::TaskCoeffs& m) const {
    return {{"type", "TaskCoeffs"}, {"epoch", m.epoch}, {"a", m.a}, {"keys", m.keys}};
  }
  nlohmann::json operator()(const msg::GetConfig&) const { return {{"type", "GetConfig"}}; }
  nlohmann::json operator()(const msg::Config& m) const { return {{"type", "Config"}, {"config", config_json(m.cfg)}}; }
  nlohmann::json operator()(const msg::Failure& m) const {
    return {{"type", "Error"}, {"code", std::string(to_string(m.code))}, {"detail", m.detail}};
  }
};

}  // namespace

std::string debug_json(const Message& m) { return std::visit(JsonDump{}, m).dump(2); }

namespace {

KernelSpec kernel_from_json(const nlohmann::json& j) {
  const std::string v = j.is_string() ? j.get<std::string>() : j.at("variant").get<std::string>();
  if (v == "rbf_on_tags" || v == "rbf") return KernelSpec::rbf();
  if (v == "linear_on_tags" || v == "linear") return KernelSpec::linear();
  if (v == "lookup_table") {
    auto keys = j.at("keys").get<std::vector<std::string>>();
    auto dense = j.at("values").get<std::vector<double>>();
    return KernelSpec::lookup(LookupTable::from_dense(std::move(keys), dense));
  }
  throw Error(ErrorCode::InvalidArgument, "unknown kernel variant '" + v + "'");
}

}  // namespace

DaemonConfig load_daemon_config(const std::string& path) {
  const Bytes raw = read_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("daemon config is not valid JSON: ") + e.what());
  }
  DaemonConfig cfg;
  try {
    cfg.model.alpha = j.at("alpha").get<double>();
    cfg.model.lambda = j.at("lambda").get<double>();
    if (j.contains("kbar")) cfg.model.kbar = kernel_from_json(j["kbar"]);
    if (j.contains("ktilde")) cfg.model.ktilde_default = kernel_from_json(j["ktilde"]);
    const std::size_t d = j.value("bias_dim", std::size_t{0});
    if (d > 1) throw Error(ErrorCode::InvalidArgument, "daemon config supports bias_dim 0 or 1");
    cfg.model.bias = d == 1 ? BiasBasis::constant() : BiasBasis::none();
    cfg.host = j.value("host", cfg.host);
    cfg.port = j.value("port", cfg.port);
    cfg.snapshot_path = j.value("snapshot_path", std::string{});
    cfg.snapshot_every = j.value("snapshot_every", std::uint64_t{0});
    if (j.contains("tokens")) {
      for (const auto& [task, token] : j["tokens"].items()) cfg.tokens[static_cast<TaskId>(std::stoul(task))] = token.get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("bad daemon config: ") + e.what());
  }
  cfg.model.validate();
  return cfg;
}

namespace {

ServerState initial_state(const DaemonConfig& cfg) {
  if (!cfg.snapshot_path.empty() && std::filesystem::exists(cfg.snapshot_path)) {
    ServerState s = load_snapshot(read_file(cfg.snapshot_path));
    if (!(s.cfg == cfg.model)) throw Error(ErrorCode::InvalidArgument, "snapshot was written with a different model configuration");
    return s;
  }
  return Server(cfg.model).state();
}

}  // namespace

Daemon::Daemon(DaemonConfig cfg) : Daemon(cfg, initial_state(cfg)) {}

Daemon::Daemon(DaemonConfig cfg, ServerState restored) : cfg_(std::move(cfg)), server_(std::move(restored)) {}

bool Daemon::authorized(TaskId task, const std::string& token) const {
  const auto it = cfg_.tokens.find(task);
  return it != cfg_.tokens.end() && it->second == token;
}

DisclosedDB Daemon::disclosed() const {
  std::shared_lock lock(mu_);
  return server_.get_disclosed();
}

ServerState Daemon::state() const {
  std::shared_lock lock(mu_);
  return server_.state();
}

void Daemon::save_snapshot_now() const {
  if (cfg_.snapshot_path.empty()) return;
  Bytes bytes;
  {
    std::shared_lock lock(mu_);
    bytes = save_snapshot(server_.state());
  }
  write_file(cfg_.snapshot_path, bytes);
}

Message Daemon::handle(const Message& request) {
  try {
    if (const auto* m = std::get_if<msg::SubmitExample>(&request)) {
      if (!authorized(m->task, m->token)) return msg::Failure{ErrorCode::Unauthorized, "bad token for task " + std::to_string(m->task)};
      std::unique_lock lock(mu_);
      const UpdateReceipt rc = server_.receive_example(m->task, InputPoint{m->key, m->features}, m->y, m->w);
      if (cfg_.snapshot_every > 0 && rc.epoch % cfg_.snapshot_every == 0 && !cfg_.snapshot_path.empty()) {
        write_file(cfg_.snapshot_path, save_snapshot(server_.state()));
      }
      return msg::Ack{rc.epoch, rc.kind};
    }
    if (std::holds_alternative<msg::GetDisclosed>(request)) return msg::Disclosed{disclosed()};
    if (const auto* m = std::get_if<msg::GetTaskCoeffs>(&request)) {
      if (!authorized(m->task, m->token)) return msg::Failure{ErrorCode::Unauthorized, "bad token for task " + std::to_string(m->task)};
      std::shared_lock lock(mu_);
      msg::TaskCoeffs out;
      out.epoch = server_.epoch();
      if (server_.task(m->task)) {
        out.a = server_.get_task_coefficients(m->task);
        for (const auto& x : server_.task_inputs(m->task)) out.keys.push_back(x.key);
      }
      return out;
    }
    if (std::holds_alternative<msg::GetConfig>(request)) return msg::Config{server_.config()};
    return msg::Failure{ErrorCode::MalformedFrame, "message is not a request"};
  } catch (const Error& e) {
    return msg::Failure{e.code(), e.what()};
  }
}

Bytes Daemon::handle(std::span<const std::uint8_t> request) {
  Message reply;
  try {
    reply = handle(decode(request));
  } catch (const Error& e) {
    reply = msg::Failure{e.code(), e.what()};
  } catch (const std::exception& e) {
    reply = msg::Failure{ErrorCode::InvalidArgument, e.what()};
  }
  return encode(reply);
}

Message ServiceClient::call(const Message& m) {
  const Bytes reply = transport_.roundtrip(encode(m));
  Message out = decode(reply);
  if (const auto* f = std::get_if<msg::Failure>(&out)) throw Error(f->code, f->detail);
  return out;
}

msg::Ack ServiceClient::submit(const InputPoint& x, double y, double w) {
  Message reply = call(msg::SubmitExample{task_, token_, x.key, x.features, y, w});
  if (auto* a = std::get_if<msg::Ack>(&reply)) return *a;
  throw Error(ErrorCode::MalformedFrame, "expected Ack");
}

DisclosedDB ServiceClient::get_disclosed() {
  Message reply = call(msg::GetDisclosed{});
  if (auto* d = std::get_if<msg::Disclosed>(&reply)) return std::move(d->db);
  throw Error(ErrorCode::MalformedFrame, "expected Disclosed");
}

msg::TaskCoeffs ServiceClient::get_task_coeffs() {
  Message reply = call(msg::GetTaskCoeffs{task_, token_});
  if (auto* t = std::get_if<msg::TaskCoeffs>(&reply)) return std::move(*t);
  throw Error(ErrorCode::MalformedFrame, "expected TaskCoeffs");
}

MixedEffectConfig ServiceClient::get_config() {
  Message reply = call(msg::GetConfig{});
  if (auto* c = std::get_if<msg::Config>(&reply)) return std::move(c->cfg);
  throw Error(ErrorCode::MalformedFrame, "expected Config");
}

}  // namespace mtk
