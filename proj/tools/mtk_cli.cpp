// mtk: command-line driver for the simulated recommendation experiment and
// the estimation daemon.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "mtk/client.hpp"
#include "mtk/error.hpp"
#include "mtk/protocol.hpp"
#include "mtk/sim.hpp"

namespace {

using namespace mtk;

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

// "lin:LO:HI:N", "log:LO_EXP:HI_EXP:N" or a comma-separated list.
std::vector<double> parse_grid(const std::string& spec) {
  auto parts = [](const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    return out;
  };
  try {
    if (spec.rfind("lin:", 0) == 0 || spec.rfind("log:", 0) == 0) {
      const auto p = parts(spec, ':');
      if (p.size() != 4) throw std::invalid_argument("expected 4 fields");
      const double lo = std::stod(p[1]);
      const double hi = std::stod(p[2]);
      const auto n = static_cast<std::size_t>(std::stoul(p[3]));
      return p[0] == "lin" ? sim::linspace(lo, hi, n) : sim::logspace(lo, hi, n);
    }
    std::vector<double> out;
    for (const auto& s : parts(spec, ',')) out.push_back(std::stod(s));
    return out;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bad grid '" + spec + "'");
  }
}

void add_synth_flags(CLI::App* cmd, sim::SynthConfig& c) {
  cmd->add_option("--artists", c.num_artists, "number of artists |X|");
  cmd->add_option("--tag-dim", c.tag_dim, "tags per artist");
  cmd->add_option("--users", c.num_users, "number of users m");
  cmd->add_option("--samples", c.samples_per_user, "training triples per user");
  cmd->add_option("--noise", c.noise_sd, "output noise standard deviation")->check(CLI::NonNegativeNumber);
  cmd->add_option("--mix-average", c.mix_average, "weight of the average preference");
  cmd->add_option("--mix-individual", c.mix_individual, "weight of the individual preference");
  cmd->add_option("--tag-density", c.tag_density, "probability of a nonzero synthetic tag")->check(CLI::Range(0.0, 1.0));
  cmd->add_flag("--distinct", c.distinct_samples, "sample each user's artists without replacement");
  cmd->add_option("--seed", c.seed, "random seed");
}

sim::World make_world(const sim::SynthConfig& c, const std::string& world_dir, const std::string& tags) {
  if (!world_dir.empty()) return sim::load_world_dir(world_dir);
  if (!tags.empty()) return sim::generate_world(c, sim::load_tag_file(tags, c.tag_dim));
  return sim::generate_world(c);
}

void print_grid(const sim::SweepResult& r) {
  std::printf("%10s %12s %12s %10s\n", "alpha", "lambda", "rmse", "top_hits");
  for (const auto& c : r.cells) {
    if (c.ok) {
      std::printf("%10.4f %12.4e %12.6f %10.4f\n", c.alpha, c.lambda, c.rmse, c.top_hits);
    } else {
      std::printf("%10.4f %12.4e %12s %10s  (%s)\n", c.alpha, c.lambda, "failed", "-", c.error.c_str());
    }
  }
  if (r.best) {
    const auto& b = r.cells[*r.best];
    std::printf("best: alpha=%.4f lambda=%.4e rmse=%.6f top_hits=%.4f\n", b.alpha, b.lambda, b.rmse, b.top_hits);
  }
}

int run_serve_demo(sim::SynthConfig synth, double alpha, double lambda) {
  const sim::World world = sim::generate_world(synth);
  DaemonConfig dc;
  dc.model = sim::experiment_config(alpha, lambda);
  for (std::size_t j = 0; j < world.train.m; ++j) dc.tokens[static_cast<TaskId>(j)] = "user-" + std::to_string(j);
  Daemon daemon(dc);
  HttpServer http(daemon);
  const int port = http.start("127.0.0.1", 0);
  std::printf("daemon listening on 127.0.0.1:%d\n", port);

  // The last user stays passive: its triples never leave the client.
  const TaskId passive = static_cast<TaskId>(world.train.m - 1);
  auto transport_owner = std::make_unique<HttpTransport>("127.0.0.1", port);
  HttpTransport& transport = *transport_owner;
  PrivateData private_data;
  std::size_t sent = 0;
  for (const Triple& t : world.train.triples) {
    if (t.task == passive) {
      private_data.examples.push_back({t.x, t.y, t.w});
      continue;
    }
    ServiceClient conn(transport, t.task, dc.tokens.at(t.task));
    conn.submit(t.x, t.y, t.w);
    ++sent;
  }
  std::printf("submitted %zu triples from %zu active users\n", sent, world.train.m - 1);

  ServiceClient probe(transport, passive, dc.tokens.at(passive));
  const MixedEffectConfig cfg = probe.get_config();
  const DisclosedDB snapshot = probe.get_disclosed();
  const ClientModel pmodel = passive_refresh(passive, snapshot, private_data, cfg);
  std::printf("disclosed epoch %llu with %zu unique inputs\n", static_cast<unsigned long long>(snapshot.epoch),
              snapshot.xcheck.size());

  ServiceClient first(transport, 0, dc.tokens.at(0));
  const ClientModel amodel = active_refresh(first, cfg);
  std::printf("user 0 (active):   condensed identity residual %.3e\n", condensed_identity_residual(amodel));
  std::printf("user %u (passive): condensed identity residual %.3e\n", passive, condensed_identity_residual(pmodel));
  std::printf("%-14s %12s %12s\n", "artist", "user 0", "passive");
  for (std::size_t i = 0; i < std::min<std::size_t>(5, world.artists.size()); ++i) {
    std::printf("%-14s %12.6f %12.6f\n", world.artists[i].key.c_str(), preference_score(amodel, cfg, world.artists[i]),
                preference_score(pmodel, cfg, world.artists[i]));
  }
  transport_owner.reset();
  http.stop();
  return 0;
}

int run_serve(const std::string& config_path) {
  const DaemonConfig dc = load_daemon_config(config_path);
  Daemon daemon(dc);
  HttpServer http(daemon);
  const int port = http.start(dc.host, dc.port);
  std::printf("daemon listening on %s:%d\n", dc.host.c_str(), port);
  std::fflush(stdout);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  http.stop();
  if (!dc.snapshot_path.empty()) daemon.save_snapshot_now();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task kernel estimation: simulated experiment and daemon"};
  app.require_subcommand(1);

  sim::SynthConfig synth;
  std::string out_dir = "out";
  std::string tags;
  std::string world_dir;

  auto* gen = app.add_subcommand("generate", "draw a synthetic world and write it to --out");
  add_synth_flags(gen, synth);
  gen->add_option("--tags", tags, "tab-separated tag file (name, then tag values)")->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "output directory");

  std::string alpha_grid = "lin:0:1:8";
  std::string lambda_grid = "log:-7:0:8";
  std::string mode = "offline";
  std::size_t k = 20;
  std::size_t report_users = 3;
  auto* sw = app.add_subcommand("sweep", "evaluate an (alpha, lambda) grid and write the report");
  add_synth_flags(sw, synth);
  sw->add_option("--tags", tags, "tab-separated tag file")->check(CLI::ExistingFile);
  sw->add_option("--world", world_dir, "directory written by `generate` (overrides synthetic flags)")
      ->check(CLI::ExistingDirectory);
  sw->add_option("--alpha-grid", alpha_grid, "lin:LO:HI:N, log:E0:E1:N or a comma list");
  sw->add_option("--lambda-grid", lambda_grid, "lin:LO:HI:N, log:E0:E1:N or a comma list");
  sw->add_option("--mode", mode, "training path")->check(CLI::IsMember({"offline", "client-server"}));
  sw->add_option("--k", k, "top-k size for the hit metric");
  sw->add_option("--report-users", report_users, "users listed in topk_users.tsv");
  sw->add_option("--out", out_dir, "output directory");

  std::string sweep_json;
  auto* rep = app.add_subcommand("report", "re-emit report files from a saved sweep.json");
  rep->add_option("--in", sweep_json, "sweep.json written by `sweep`")->required()->check(CLI::ExistingFile);
  rep->add_option("--out", out_dir, "output directory");
  rep->add_option("--report-users", report_users, "users listed in topk_users.tsv");

  double alpha = 0.25;
  double lambda = 1e-3;
  sim::SynthConfig demo_synth;
  demo_synth.num_artists = 30;
  demo_synth.num_users = 8;
  auto* demo = app.add_subcommand("serve-demo", "run a daemon on a free local port with active and passive clients");
  add_synth_flags(demo, demo_synth);
  demo->add_option("--alpha", alpha, "shrinkage alpha")->check(CLI::Range(0.0, 1.0));
  demo->add_option("--lambda", lambda, "regularization lambda")->check(CLI::PositiveNumber);

  std::string config_path;
  auto* serve = app.add_subcommand("serve", "run the daemon over HTTP until interrupted");
  serve->add_option("--config", config_path, "JSON daemon configuration")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const sim::World w = make_world(synth, "", tags);
      sim::save_world_dir(out_dir, w);
      std::printf("wrote %zu artists, %zu users, %zu triples to %s\n", w.artists.size(), w.train.m,
                  w.train.triples.size(), out_dir.c_str());
    } else if (*sw) {
      const sim::World w = make_world(synth, world_dir, tags);
      const auto m = mode == "offline" ? sim::Mode::Offline : sim::Mode::ClientServer;
      const sim::SweepResult r = sim::sweep(w, parse_grid(alpha_grid), parse_grid(lambda_grid), m, k);
      std::filesystem::create_directories(out_dir);
      sim::save_sweep_json((std::filesystem::path(out_dir) / "sweep.json").string(), r);
      sim::emit_report(r, out_dir, report_users);
      print_grid(r);
    } else if (*rep) {
      sim::emit_report(sim::load_sweep_json(sweep_json), out_dir, report_users);
    } else if (*demo) {
      return run_serve_demo(demo_synth, alpha, lambda);
    } else if (*serve) {
      return run_serve(config_path);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
