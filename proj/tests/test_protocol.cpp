#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "mtk/client.hpp"
#include "mtk/protocol.hpp"
#include "support.hpp"

using namespace mtk;
using namespace mtk::test;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("mtk-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

DaemonConfig daemon_config(const MixedEffectConfig& cfg, std::size_t m) {
  DaemonConfig dc;
  dc.model = cfg;
  for (std::size_t j = 0; j < m; ++j) dc.tokens[static_cast<TaskId>(j)] = "secret-" + std::to_string(j);
  return dc;
}

}  // namespace

TEST_SUITE("service-protocol") {
  TEST_CASE("simple messages round-trip") {
    const Message g = msg::GetDisclosed{};
    CHECK(decode(encode(g)) == g);
    const Message d = msg::Disclosed{};
    const Bytes b = encode(d);
    CHECK(decode(b) == d);
    CHECK(b.size() == 4 + 2 + 1 + 8 + 4);  // header, epoch, n
    DisclosedDB bad;
    bad.ycheck = {1.0};
    CHECK(error_code([&] { encode(msg::Disclosed{bad}); }) == ErrorCode::ShapeMismatch);
  }

  TEST_CASE("malformed frames are rejected") {
    const Bytes ok = encode(msg::GetTaskCoeffs{3, "tok"});
    Bytes cut(ok.begin(), ok.end() - 1);
    CHECK(error_code([&] { decode(cut); }) == ErrorCode::MalformedFrame);
    Bytes extra = ok;
    extra.push_back(0);
    CHECK(error_code([&] { decode(extra); }) == ErrorCode::MalformedFrame);
    Bytes magic = ok;
    magic[0] = 'X';
    CHECK(error_code([&] { decode(magic); }) == ErrorCode::MalformedFrame);
    Bytes version = ok;
    version[4] = 9;
    CHECK(error_code([&] { decode(version); }) == ErrorCode::UnsupportedVersion);
    Bytes tag = ok;
    tag[6] = 77;
    CHECK(error_code([&] { decode(tag); }) == ErrorCode::MalformedFrame);
    // A huge declared length must not allocate.
    Bytes huge = encode(msg::GetTaskCoeffs{3, ""});
    huge[huge.size() - 4] = 0xff;
    huge[huge.size() - 1] = 0x7f;
    CHECK(error_code([&] { decode(huge); }) == ErrorCode::MalformedFrame);
  }

  TEST_CASE("snapshots") {
    const ServerState empty = Server(MixedEffectConfig{}).state();
    CHECK(load_snapshot(save_snapshot(empty)) == empty);

    const Instance in = random_instance(3, 0.5, 0.1, 1, Shape{3, 5, 8});
    Server s(in.cfg);
    for (const auto& t : in.ds.triples) s.receive_example(t.task, t.x, t.y, t.w);
    const Bytes bytes = save_snapshot(s.state());
    CHECK(load_snapshot(bytes) == s.state());
    CHECK(save_snapshot(load_snapshot(bytes)) == bytes);
    for (std::size_t i : {std::size_t{0}, bytes.size() / 2, bytes.size() - 1}) {
      Bytes bad = bytes;
      bad[i] ^= 0x10;
      CHECK(error_code([&] { load_snapshot(bad); }) == ErrorCode::ChecksumMismatch);
    }
    Bytes shortened(bytes.begin(), bytes.begin() + 3);
    CHECK(error_code([&] { load_snapshot(shortened); }).has_value());
  }

  TEST_CASE("daemon request semantics") {
    const Instance in = random_instance(4, 0.5, 0.1, 0, Shape{3, 5, 8});
    const DaemonConfig dc = daemon_config(in.cfg, in.ds.m);
    Daemon daemon(dc);
    LoopbackTransport t(daemon);
    ServiceClient c0(t, 0, dc.tokens.at(0));
    const msg::Ack ack = c0.submit(in.pool[0], 1.0, 1.0);
    CHECK(ack.epoch == 1);
    CHECK(c0.get_disclosed().epoch == 1);
    CHECK(c0.get_task_coeffs().epoch == 1);
    CHECK(c0.get_config() == in.cfg);

    ServiceClient thief(t, 0, "wrong");
    CHECK(error_code([&] { thief.get_task_coeffs(); }) == ErrorCode::Unauthorized);
    CHECK(error_code([&] { thief.submit(in.pool[0], 1.0, 1.0); }) == ErrorCode::Unauthorized);
    ServiceClient unknown(t, 999, "secret-0");
    CHECK(error_code([&] { unknown.get_task_coeffs(); }) == ErrorCode::Unauthorized);
    CHECK(error_code([&] { c0.submit(in.pool[0], 1.0, -1.0); }) == ErrorCode::NonPositiveWeight);
    CHECK(daemon.disclosed().epoch == 1);

    // Garbage and non-request frames are answered with a Failure.
    const Bytes junk{1, 2, 3};
    CHECK(std::holds_alternative<msg::Failure>(decode(daemon.handle(junk))));
    const Bytes ack_frame = encode(msg::Ack{});
    CHECK(std::holds_alternative<msg::Failure>(decode(daemon.handle(ack_frame))));
  }

  TEST_CASE("periodic snapshots restore the daemon") {
    const auto dir = temp_dir("snap");
    const Instance in = random_instance(5, 0.25, 0.1, 1, Shape{3, 6, 8});
    DaemonConfig dc = daemon_config(in.cfg, in.ds.m);
    dc.snapshot_path = (dir / "state.bin").string();
    dc.snapshot_every = 2;
    ServerState saved;
    {
      Daemon d(dc);
      LoopbackTransport t(d);
      for (const auto& tr : in.ds.triples) ServiceClient(t, tr.task, dc.tokens.at(tr.task)).submit(tr.x, tr.y, tr.w);
      d.save_snapshot_now();
      saved = d.state();
    }
    Daemon restarted(dc);
    CHECK(restarted.state() == saved);

    DaemonConfig other = dc;
    other.model.lambda = 0.5;
    CHECK(error_code([&] { Daemon{other}; }) == ErrorCode::InvalidArgument);
  }

  TEST_CASE("daemon config files") {
    const auto dir = temp_dir("cfg");
    const auto path = (dir / "daemon.json").string();
    std::ofstream(path) << R"({"alpha": 0.25, "lambda": 0.001, "ktilde": "rbf", "bias_dim": 1,
                              "port": 8123, "snapshot_every": 10, "tokens": {"0": "a", "7": "b"}})";
    const DaemonConfig dc = load_daemon_config(path);
    CHECK(dc.model.alpha == 0.25);
    CHECK(dc.model.ktilde_default == KernelSpec::rbf());
    CHECK(dc.model.bias.dim() == 1);
    CHECK(dc.port == 8123);
    CHECK(dc.tokens.at(7) == "b");
    std::ofstream(path) << R"({"alpha": 2, "lambda": 1})";
    CHECK(error_code([&] { load_daemon_config(path); }) == ErrorCode::InvalidArgument);
    std::ofstream(path) << "{";
    CHECK(error_code([&] { load_daemon_config(path); }) == ErrorCode::InvalidArgument);
  }

  TEST_CASE("three clients over HTTP reproduce the batch fit") {
    const Instance in = random_instance(6, 0.5, 0.1, 1, Shape{3, 8, 10});
    Dataset ds = in.ds;
    ds.m = 3;
    for (std::size_t i = 0; i < ds.triples.size(); ++i) ds.triples[i].task = static_cast<TaskId>(i % 3);
    const DaemonConfig dc = daemon_config(in.cfg, 3);
    Daemon daemon(dc);
    HttpServer http(daemon);
    const int port = http.start("127.0.0.1", 0);
    REQUIRE(port > 0);
    {
      HttpTransport t("127.0.0.1", port);
      for (const auto& tr : ds.triples) ServiceClient(t, tr.task, dc.tokens.at(tr.task)).submit(tr.x, tr.y, tr.w);
      const OfflineFit oracle = algorithm1(ds, in.cfg).fit;
      for (TaskId j = 0; j < 3; ++j) {
        ServiceClient c(t, j, dc.tokens.at(j));
        const ClientModel model = active_refresh(c, c.get_config());
        for (const auto& p : in.probes) CHECK(rel_diff(predict_client(model, in.cfg, p), predict(oracle, in.cfg, j, p)) <= 1e-8);
      }
    }
    http.stop();
  }

  TEST_CASE("concurrent submitters see a total order of epochs") {
    const Instance in = random_instance(7, 0.5, 0.1, 0, Shape{4, 10, 12});
    Dataset ds = in.ds;
    ds.m = 4;
    for (std::size_t i = 0; i < ds.triples.size(); ++i) ds.triples[i].task = static_cast<TaskId>(i % 4);
    const DaemonConfig dc = daemon_config(in.cfg, 4);
    Daemon daemon(dc);
    std::vector<std::vector<std::uint64_t>> epochs(4);
    std::vector<std::thread> threads;
    for (TaskId j = 0; j < 4; ++j) {
      threads.emplace_back([&, j] {
        LoopbackTransport t(daemon);
        ServiceClient c(t, j, dc.tokens.at(j));
        for (const auto& tr : ds.triples) {
          if (tr.task == j) epochs[j].push_back(c.submit(tr.x, tr.y, tr.w).epoch);
          c.get_disclosed();
        }
      });
    }
    for (auto& th : threads) th.join();
    std::vector<std::uint64_t> all;
    for (const auto& e : epochs) {
      CHECK(std::is_sorted(e.begin(), e.end()));
      all.insert(all.end(), e.begin(), e.end());
    }
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i + 1);
    const Server s(daemon.state());
    CHECK(max_rel_diff(server_predictions(s, 4, in.probes), fit_predictions(algorithm1(ds, in.cfg).fit, in.cfg, in.probes)) <= 1e-8);
  }

  TEST_CASE("debug rendering is JSON") {
    const std::string j = debug_json(msg::Ack{5, UpdateCase::RepeatTask});
    CHECK(j.find("\"epoch\": 5") != std::string::npos);
  }
}
