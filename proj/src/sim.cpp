#include "mtk/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "mtk/client.hpp"
#include "mtk/error.hpp"
#include "mtk/protocol.hpp"

namespace mtk::sim {
namespace {

using json = nlohmann::json;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string artist_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "artist-%04zu", i);
  return buf;
}

std::vector<InputPoint> synth_artists(const SynthConfig& cfg, std::mt19937_64& rng) {
  std::bernoulli_distribution present(cfg.tag_density);
  std::uniform_real_distribution<double> value(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, cfg.tag_dim - 1);
  std::vector<InputPoint> out;
  out.reserve(cfg.num_artists);
  for (std::size_t i = 0; i < cfg.num_artists; ++i) {
    Vector z(cfg.tag_dim, 0.0);
    bool any = false;
    for (double& t : z) {
      if (present(rng)) {
        t = value(rng);
        any = any || t > 0.0;
      }
    }
    if (!any) z[pick(rng)] = 1.0;
    out.push_back({artist_name(i), normalize(z)});
  }
  return out;
}

Eigen::MatrixXd gram_factor(const Eigen::MatrixXd& gram, const char* what) {
  Eigen::MatrixXd g = gram;
  g.diagonal().array() += kGramJitter;
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::DegenerateGram, std::string(what) + " Gram matrix is not positive definite");
  return llt.matrixL();
}

Eigen::VectorXd gaussian(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd g(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < g.size(); ++i) g[i] = nd(rng);
  return g;
}

// Kernel matrices over the artist set, shared by every grid cell.
struct Precomputed {
  Eigen::MatrixXd kbar;
  Eigen::MatrixXd ktilde;
  Eigen::MatrixXd psi;  // |X| x d
  std::unordered_map<std::string, std::size_t> index;
  Eigen::MatrixXd s_true;
};

Precomputed precompute(const World& w, const BiasBasis& bias) {
  Precomputed p;
  const MixedEffectConfig cfg = experiment_config(0.5, 1.0, bias);
  p.kbar = ker(w.artists, w.artists, cfg.kbar);
  p.ktilde = ker(w.artists, w.artists, cfg.ktilde_default);
  p.psi = mtk::bias(w.artists, bias);
  for (std::size_t i = 0; i < w.artists.size(); ++i) p.index.emplace(w.artists[i].key, i);
  p.s_true = squash(w.f_true);
  return p;
}

std::size_t artist_index(const Precomputed& p, const std::string& key) {
  const auto it = p.index.find(key);
  if (it == p.index.end()) throw Error(ErrorCode::UnknownKey, "input '" + key + "' is not an artist");
  return it->second;
}

// f̂_j over all artists from shared coefficients (ă over x̆, b) and task coefficients.
Eigen::VectorXd evaluate_row(const Precomputed& p, double alpha, const std::vector<InputPoint>& xcheck,
                             const Vector& acheck, const Vector& b, const std::vector<InputPoint>& task_inputs,
                             const Vector& a_task) {
  const Eigen::Index nx = p.kbar.cols();
  Eigen::VectorXd shared = Eigen::VectorXd::Zero(nx);
  for (std::size_t i = 0; i < xcheck.size(); ++i) {
    shared += acheck[i] * p.kbar.row(static_cast<Eigen::Index>(artist_index(p, xcheck[i].key))).transpose();
  }
  for (std::size_t k = 0; k < b.size(); ++k) shared += b[k] * p.psi.col(static_cast<Eigen::Index>(k));
  Eigen::VectorXd shift = Eigen::VectorXd::Zero(nx);
  for (std::size_t i = 0; i < task_inputs.size(); ++i) {
    shift += a_task[i] * p.ktilde.row(static_cast<Eigen::Index>(artist_index(p, task_inputs[i].key))).transpose();
  }
  return alpha * shared + (1.0 - alpha) * shift;
}

Eigen::MatrixXd predict_offline(const World& world, const Precomputed& p, const MixedEffectConfig& cfg) {
  const Algorithm1Result res = algorithm1(world.train, cfg);
  const auto& idx = res.fit.index;
  const auto& c = res.fit.coeffs;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(world.train.m), p.kbar.cols());
  for (std::size_t j = 0; j < world.train.m; ++j) {
    std::vector<InputPoint> task_inputs;
    for (std::size_t s : idx.h[j]) task_inputs.push_back(idx.unique[s]);
    out.row(static_cast<Eigen::Index>(j)) =
        evaluate_row(p, cfg.alpha, idx.unique, c.acheck, c.b, task_inputs, c.a_task[j]).transpose();
  }
  return out;
}

Eigen::MatrixXd predict_client_server(const World& world, const Precomputed& p, const MixedEffectConfig& cfg) {
  DaemonConfig dc;
  dc.model = cfg;
  for (std::size_t j = 0; j < world.train.m; ++j) dc.tokens[static_cast<TaskId>(j)] = "user-" + std::to_string(j);
  Daemon daemon(dc);
  LoopbackTransport transport(daemon);
  for (const Triple& t : world.train.triples) {
    ServiceClient conn(transport, t.task, dc.tokens.at(t.task));
    conn.submit(t.x, t.y, t.w);
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(world.train.m), p.kbar.cols());
  for (std::size_t j = 0; j < world.train.m; ++j) {
    const TaskId task = static_cast<TaskId>(j);
    ServiceClient conn(transport, task, dc.tokens.at(task));
    const ClientModel model = active_refresh(conn, cfg);
    out.row(static_cast<Eigen::Index>(j)) =
        evaluate_row(p, cfg.alpha, model.disclosed.xcheck, model.acheck, model.b, model.task_inputs, model.a_task)
            .transpose();
  }
  return out;
}

Eigen::MatrixXd fit_with(const World& world, const Precomputed& p, const MixedEffectConfig& cfg, Mode mode) {
  return mode == Mode::Offline ? predict_offline(world, p, cfg) : predict_client_server(world, p, cfg);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot write " + path);
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::Io, "cannot read " + path);
  return is;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_real(const std::string& s, const std::string& where) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, where + ": bad number '" + s + "'");
  return v;
}

}  // namespace

World generate_world(const SynthConfig& cfg, std::optional<std::vector<InputPoint>> artists) {
  if (cfg.noise_sd < 0.0 || !std::isfinite(cfg.noise_sd)) throw Error(ErrorCode::InvalidArgument, "noise_sd must be >= 0");
  if (cfg.num_users == 0) throw Error(ErrorCode::InvalidArgument, "num_users must be positive");
  if (cfg.tag_dim == 0) throw Error(ErrorCode::InvalidArgument, "tag_dim must be positive");
  std::mt19937_64 rng(cfg.seed);
  World w;
  w.cfg = cfg;
  if (artists) {
    w.artists = std::move(*artists);
    w.cfg.num_artists = w.artists.size();
    for (const auto& a : w.artists) {
      if (a.features.size() != cfg.tag_dim) throw Error(ErrorCode::ShapeMismatch, "artist '" + a.key + "' has the wrong tag count");
    }
  } else {
    w.artists = synth_artists(cfg, rng);
  }
  const std::size_t nx = w.artists.size();
  if (nx == 0) throw Error(ErrorCode::InvalidArgument, "no artists");
  if (cfg.distinct_samples && cfg.samples_per_user > nx) {
    throw Error(ErrorCode::InvalidArgument, "samples_per_user exceeds the artist count");
  }

  const MixedEffectConfig kc = experiment_config(0.5, 1.0);
  const Eigen::MatrixXd lbar = gram_factor(ker(w.artists, w.artists, kc.kbar), "Kbar");
  const Eigen::MatrixXd ltilde = gram_factor(ker(w.artists, w.artists, kc.ktilde_default), "Ktilde");

  w.f_average = lbar * gaussian(nx, rng);
  w.f_true.resize(static_cast<Eigen::Index>(cfg.num_users), static_cast<Eigen::Index>(nx));
  w.train.m = cfg.num_users;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick(0, nx - 1);
  std::vector<std::size_t> perm(nx);
  for (std::size_t j = 0; j < cfg.num_users; ++j) {
    const Eigen::VectorXd fj = cfg.mix_average * w.f_average + cfg.mix_individual * (ltilde * gaussian(nx, rng));
    w.f_true.row(static_cast<Eigen::Index>(j)) = fj.transpose();
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    for (std::size_t s = 0; s < cfg.samples_per_user; ++s) {
      std::size_t i;
      if (cfg.distinct_samples) {
        std::uniform_int_distribution<std::size_t> rest(s, nx - 1);
        std::swap(perm[s], perm[rest(rng)]);
        i = perm[s];
      } else {
        i = pick(rng);
      }
      const double eps = noise(rng);
      w.train.triples.push_back({static_cast<TaskId>(j), w.artists[i], fj[static_cast<Eigen::Index>(i)] + cfg.noise_sd * eps, 1.0});
    }
  }
  return w;
}

std::vector<InputPoint> load_tag_file(const std::string& path, std::size_t tag_dim) {
  std::ifstream is = open_in(path);
  std::vector<InputPoint> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cols = split_tabs(line);
    const std::string where = path + ":" + std::to_string(lineno);
    if (cols.size() != tag_dim + 1) {
      throw Error(ErrorCode::ShapeMismatch, where + ": expected name and " + std::to_string(tag_dim) + " tags");
    }
    Vector z(tag_dim);
    for (std::size_t k = 0; k < tag_dim; ++k) z[k] = parse_real(cols[k + 1], where);
    out.push_back({cols[0], is_unit_norm(z, 1e-12) ? z : normalize(z)});
  }
  return out;
}

void write_tag_file(const std::string& path, const std::vector<InputPoint>& artists) {
  std::ofstream os = open_out(path);
  for (const auto& a : artists) {
    os << a.key;
    for (double v : a.features) os << '\t' << fmt(v);
    os << '\n';
  }
}

void write_training_file(const std::string& path, const World& w) {
  std::ofstream os = open_out(path);
  os << "user\tartist\ty\tw\n";
  for (const auto& t : w.train.triples) os << t.task << '\t' << t.x.key << '\t' << fmt(t.y) << '\t' << fmt(t.w) << '\n';
}

void write_truth_file(const std::string& path, const World& w) {
  std::ofstream os = open_out(path);
  os << "user";
  for (const auto& a : w.artists) os << '\t' << a.key;
  os << '\n';
  for (Eigen::Index j = 0; j < w.f_true.rows(); ++j) {
    os << j;
    for (Eigen::Index i = 0; i < w.f_true.cols(); ++i) os << '\t' << fmt(w.f_true(j, i));
    os << '\n';
  }
}

void save_world_dir(const std::string& dir, const World& w) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  write_tag_file((d / "artists.tsv").string(), w.artists);
  write_training_file((d / "train.tsv").string(), w);
  write_truth_file((d / "truth.tsv").string(), w);
  json j;
  j["num_artists"] = w.artists.size();
  j["tag_dim"] = w.cfg.tag_dim;
  j["num_users"] = w.cfg.num_users;
  j["samples_per_user"] = w.cfg.samples_per_user;
  j["noise_sd"] = w.cfg.noise_sd;
  j["mix_average"] = w.cfg.mix_average;
  j["mix_individual"] = w.cfg.mix_individual;
  j["tag_density"] = w.cfg.tag_density;
  j["distinct_samples"] = w.cfg.distinct_samples;
  j["seed"] = w.cfg.seed;
  std::ofstream os = open_out((d / "world.json").string());
  os << j.dump(2) << '\n';
}

World load_world_dir(const std::string& dir) {
  const std::filesystem::path d(dir);
  World w;
  {
    std::ifstream is = open_in((d / "world.json").string());
    json j;
    try {
      j = json::parse(is);
      w.cfg.num_artists = j.at("num_artists").get<std::size_t>();
      w.cfg.tag_dim = j.at("tag_dim").get<std::size_t>();
      w.cfg.num_users = j.at("num_users").get<std::size_t>();
      w.cfg.samples_per_user = j.at("samples_per_user").get<std::size_t>();
      w.cfg.noise_sd = j.at("noise_sd").get<double>();
      w.cfg.mix_average = j.at("mix_average").get<double>();
      w.cfg.mix_individual = j.at("mix_individual").get<double>();
      w.cfg.tag_density = j.at("tag_density").get<double>();
      w.cfg.distinct_samples = j.at("distinct_samples").get<bool>();
      w.cfg.seed = j.at("seed").get<std::uint64_t>();
    } catch (const json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, "world.json: " + std::string(e.what()));
    }
  }
  w.artists = load_tag_file((d / "artists.tsv").string(), w.cfg.tag_dim);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < w.artists.size(); ++i) index.emplace(w.artists[i].key, i);

  const auto nx = static_cast<Eigen::Index>(w.artists.size());
  w.f_true.resize(static_cast<Eigen::Index>(w.cfg.num_users), nx);
  {
    std::ifstream is = open_in((d / "truth.tsv").string());
    std::string line;
    std::getline(is, line);
    for (Eigen::Index j = 0; j < w.f_true.rows(); ++j) {
      if (!std::getline(is, line)) throw Error(ErrorCode::ShapeMismatch, "truth.tsv: too few rows");
      const auto cols = split_tabs(line);
      if (static_cast<Eigen::Index>(cols.size()) != nx + 1) throw Error(ErrorCode::ShapeMismatch, "truth.tsv: bad row width");
      for (Eigen::Index i = 0; i < nx; ++i) w.f_true(j, i) = parse_real(cols[static_cast<std::size_t>(i) + 1], "truth.tsv");
    }
  }
  {
    std::ifstream is = open_in((d / "train.tsv").string());
    std::string line;
    std::getline(is, line);
    w.train.m = w.cfg.num_users;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto cols = split_tabs(line);
      if (cols.size() != 4) throw Error(ErrorCode::ShapeMismatch, "train.tsv: expected 4 columns");
      const auto it = index.find(cols[1]);
      if (it == index.end()) throw Error(ErrorCode::UnknownKey, "train.tsv: unknown artist '" + cols[1] + "'");
      const auto task = static_cast<TaskId>(parse_real(cols[0], "train.tsv"));
      w.train.triples.push_back({task, w.artists[it->second], parse_real(cols[2], "train.tsv"), parse_real(cols[3], "train.tsv")});
    }
    w.train.validate();
  }
  return w;
}

Eigen::MatrixXd squash(const Eigen::MatrixXd& f) {
  return f.unaryExpr([](double v) { return mtk::squash(v); });
}

double rmse(const Eigen::MatrixXd& s, const Eigen::MatrixXd& s_hat) {
  if (s.rows() != s_hat.rows() || s.cols() != s_hat.cols()) throw Error(ErrorCode::ShapeMismatch, "rmse: shapes differ");
  if (s.size() == 0) return 0.0;
  return std::sqrt((s - s_hat).squaredNorm() / static_cast<double>(s.size()));
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(k, order.size()));
  return order;
}

HitsResult top_k_hits(const Eigen::MatrixXd& s, const Eigen::MatrixXd& s_hat, std::size_t k) {
  if (s.rows() != s_hat.rows() || s.cols() != s_hat.cols()) throw Error(ErrorCode::ShapeMismatch, "top_k_hits: shapes differ");
  HitsResult r;
  const Eigen::Index nx = s.cols();
  std::vector<double> a(static_cast<std::size_t>(nx));
  std::vector<double> b(static_cast<std::size_t>(nx));
  for (Eigen::Index j = 0; j < s.rows(); ++j) {
    for (Eigen::Index i = 0; i < nx; ++i) {
      a[static_cast<std::size_t>(i)] = s(j, i);
      b[static_cast<std::size_t>(i)] = s_hat(j, i);
    }
    auto ta = top_k(a, k);
    auto tb = top_k(b, k);
    std::sort(ta.begin(), ta.end());
    std::sort(tb.begin(), tb.end());
    std::vector<std::size_t> common;
    std::set_intersection(ta.begin(), ta.end(), tb.begin(), tb.end(), std::back_inserter(common));
    r.per_user.push_back(static_cast<int>(common.size()));
  }
  if (!r.per_user.empty()) {
    r.average = std::accumulate(r.per_user.begin(), r.per_user.end(), 0.0) / static_cast<double>(r.per_user.size());
  }
  return r;
}

MixedEffectConfig experiment_config(double alpha, double lambda, BiasBasis bias) {
  MixedEffectConfig c;
  c.alpha = alpha;
  c.lambda = lambda;
  c.kbar = KernelSpec::rbf();
  c.ktilde_default = KernelSpec::linear();
  c.bias = std::move(bias);
  return c;
}

Eigen::MatrixXd fit_and_predict(const World& world, const MixedEffectConfig& cfg, Mode mode) {
  return fit_with(world, precompute(world, cfg.bias), cfg, mode);
}

std::vector<double> linspace(double lo, double hi, std::size_t count) {
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    out[i] = count == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
  }
  if (count > 1) out.back() = hi;
  return out;
}

std::vector<double> logspace(double lo_exp, double hi_exp, std::size_t count) {
  std::vector<double> out = linspace(lo_exp, hi_exp, count);
  for (double& v : out) v = std::pow(10.0, v);
  return out;
}

SweepResult sweep(const World& world, const std::vector<double>& alphas, const std::vector<double>& lambdas, Mode mode,
                  std::size_t k, const BiasBasis& bias) {
  if (alphas.empty() || lambdas.empty()) throw Error(ErrorCode::InvalidArgument, "sweep grids must be nonempty");
  if (k > world.artists.size()) throw Error(ErrorCode::InvalidArgument, "k exceeds the artist count");
  SweepResult r;
  r.alphas = alphas;
  r.lambdas = lambdas;
  r.k = k;
  for (const auto& a : world.artists) r.artist_names.push_back(a.key);
  const Precomputed p = precompute(world, bias);
  const std::size_t cells = alphas.size() * lambdas.size();
  r.cells.resize(cells);
  std::vector<Eigen::MatrixXd> s_hat(cells);

  const auto ncells = static_cast<std::ptrdiff_t>(cells);
#pragma omp parallel for schedule(dynamic, 1)
  for (std::ptrdiff_t c = 0; c < ncells; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    SweepCell& cell = r.cells[uc];
    cell.alpha = alphas[uc / lambdas.size()];
    cell.lambda = lambdas[uc % lambdas.size()];
    try {
      const MixedEffectConfig cfg = experiment_config(cell.alpha, cell.lambda, bias);
      cfg.validate();
      s_hat[uc] = squash(fit_with(world, p, cfg, mode));
      if (!s_hat[uc].allFinite()) throw Error(ErrorCode::SingularSystem, "non-finite estimates");
      cell.rmse = rmse(p.s_true, s_hat[uc]);
      const HitsResult h = top_k_hits(p.s_true, s_hat[uc], k);
      cell.hits = h.per_user;
      cell.top_hits = h.average;
      cell.ok = true;
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
      s_hat[uc].resize(0, 0);
    }
  }

  for (std::size_t c = 0; c < cells; ++c) {
    if (r.cells[c].ok && (!r.best || r.cells[c].rmse < r.cells[*r.best].rmse)) r.best = c;
  }
  if (r.best) {
    const Eigen::MatrixXd& est = s_hat[*r.best];
    const Eigen::Index nx = est.cols();
    for (Eigen::Index j = 0; j < est.rows(); ++j) {
      std::vector<double> a(static_cast<std::size_t>(nx));
      std::vector<double> b(static_cast<std::size_t>(nx));
      for (Eigen::Index i = 0; i < nx; ++i) {
        a[static_cast<std::size_t>(i)] = p.s_true(j, i);
        b[static_cast<std::size_t>(i)] = est(j, i);
      }
      UserTopK u;
      u.true_top = top_k(a, k);
      u.est_top = top_k(b, k);
      for (std::size_t i : u.true_top) u.true_scores.push_back(a[i]);
      for (std::size_t i : u.est_top) u.est_scores.push_back(b[i]);
      r.best_top.push_back(std::move(u));
    }
  }
  return r;
}

void save_sweep_json(const std::string& path, const SweepResult& r) {
  json j;
  j["alphas"] = r.alphas;
  j["lambdas"] = r.lambdas;
  j["k"] = r.k;
  j["artist_names"] = r.artist_names;
  j["best"] = r.best ? json(*r.best) : json(nullptr);
  json cells = json::array();
  for (const auto& c : r.cells) {
    cells.push_back({{"alpha", c.alpha}, {"lambda", c.lambda}, {"ok", c.ok}, {"error", c.error},
                     {"rmse", c.rmse}, {"top_hits", c.top_hits}, {"hits", c.hits}});
  }
  j["cells"] = std::move(cells);
  json users = json::array();
  for (const auto& u : r.best_top) {
    users.push_back({{"true_top", u.true_top}, {"true_scores", u.true_scores},
                     {"est_top", u.est_top}, {"est_scores", u.est_scores}});
  }
  j["best_top"] = std::move(users);
  std::ofstream os = open_out(path);
  os << j.dump(1) << '\n';
}

SweepResult load_sweep_json(const std::string& path) {
  std::ifstream is = open_in(path);
  SweepResult r;
  try {
    const json j = json::parse(is);
    r.alphas = j.at("alphas").get<std::vector<double>>();
    r.lambdas = j.at("lambdas").get<std::vector<double>>();
    r.k = j.at("k").get<std::size_t>();
    r.artist_names = j.at("artist_names").get<std::vector<std::string>>();
    if (!j.at("best").is_null()) r.best = j.at("best").get<std::size_t>();
    for (const auto& c : j.at("cells")) {
      SweepCell cell;
      cell.alpha = c.at("alpha").get<double>();
      cell.lambda = c.at("lambda").get<double>();
      cell.ok = c.at("ok").get<bool>();
      cell.error = c.at("error").get<std::string>();
      cell.rmse = c.at("rmse").get<double>();
      cell.top_hits = c.at("top_hits").get<double>();
      cell.hits = c.at("hits").get<std::vector<int>>();
      r.cells.push_back(std::move(cell));
    }
    for (const auto& u : j.at("best_top")) {
      UserTopK t;
      t.true_top = u.at("true_top").get<std::vector<std::size_t>>();
      t.true_scores = u.at("true_scores").get<std::vector<double>>();
      t.est_top = u.at("est_top").get<std::vector<std::size_t>>();
      t.est_scores = u.at("est_scores").get<std::vector<double>>();
      r.best_top.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path + ": " + e.what());
  }
  if (r.cells.size() != r.alphas.size() * r.lambdas.size()) throw Error(ErrorCode::ShapeMismatch, path + ": cell count does not match the grid");
  if (r.best && *r.best >= r.cells.size()) throw Error(ErrorCode::ShapeMismatch, path + ": best cell out of range");
  return r;
}

void emit_report(const SweepResult& r, const std::string& dir, std::size_t max_users) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path d(dir);
  {
    std::ofstream os = open_out((d / "grid.tsv").string());
    os << "alpha\tlambda\tstatus\trmse\ttop_hits\n";
    for (const auto& c : r.cells) {
      os << fmt(c.alpha) << '\t' << fmt(c.lambda) << '\t' << (c.ok ? "ok" : "failed") << '\t'
         << (c.ok ? fmt(c.rmse) : "nan") << '\t' << (c.ok ? fmt(c.top_hits) : "nan") << '\n';
    }
  }
  {
    std::ofstream os = open_out((d / "hits_histogram.tsv").string());
    os << "hits\tusers\n";
    if (r.best) {
      std::vector<std::size_t> counts(r.k + 1, 0);
      for (int h : r.cells[*r.best].hits) ++counts[static_cast<std::size_t>(h)];
      for (std::size_t h = 0; h <= r.k; ++h) os << h << '\t' << counts[h] << '\n';
    }
  }
  {
    std::ofstream os = open_out((d / "topk_users.tsv").string());
    os << "user\trank\ttrue_artist\ttrue_score\ttrue_in_est\test_artist\test_score\test_in_true\n";
    const std::size_t users = std::min(max_users, r.best_top.size());
    for (std::size_t j = 0; j < users; ++j) {
      const UserTopK& u = r.best_top[j];
      for (std::size_t q = 0; q < u.true_top.size(); ++q) {
        const bool t_hit = std::find(u.est_top.begin(), u.est_top.end(), u.true_top[q]) != u.est_top.end();
        const bool e_hit = std::find(u.true_top.begin(), u.true_top.end(), u.est_top[q]) != u.true_top.end();
        os << j << '\t' << q + 1 << '\t' << r.artist_names[u.true_top[q]] << '\t' << fmt(u.true_scores[q]) << '\t'
           << (t_hit ? '*' : '-') << '\t' << r.artist_names[u.est_top[q]] << '\t' << fmt(u.est_scores[q]) << '\t'
           << (e_hit ? '*' : '-') << '\n';
      }
    }
  }
}

}  // namespace mtk::sim
