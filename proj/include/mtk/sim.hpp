#pragma once

// Simulated recommendation experiment: synthetic users with preferences over
// tagged artists, a grid sweep over (alpha, lambda), and the RMSE / top-k hit
// metrics on squashed preferences.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mtk/kernels.hpp"
#include "mtk/offline.hpp"

namespace mtk::sim {

struct SynthConfig {
  std::size_t num_artists = 50;
  std::size_t tag_dim = 19;
  std::size_t num_users = 100;
  std::size_t samples_per_user = 5;
  double noise_sd = 0.01;
  double mix_average = 0.25;
  double mix_individual = 0.75;
  double tag_density = 0.3;       // probability that a synthetic tag is nonzero
  bool distinct_samples = false;  // sample a user's artists without replacement
  std::uint64_t seed = 1;

  static SynthConfig desk_scale() { return {}; }
  static SynthConfig full_scale() {
    SynthConfig c;
    c.num_artists = 489;
    c.num_users = 3000;
    return c;
  }
};

inline constexpr double kGramJitter = 1e-10;

struct World {
  SynthConfig cfg;
  std::vector<InputPoint> artists;
  Eigen::VectorXd f_average;  // |X|
  Eigen::MatrixXd f_true;     // users x |X|
  Dataset train;
};

/// Draws a world. Artists are synthesized unless `artists` is given.
World generate_world(const SynthConfig& cfg, std::optional<std::vector<InputPoint>> artists = std::nullopt);

/// Tab-separated tag file: one artist per line, name followed by tag_dim reals.
/// Rows not already of unit length are normalized on load.
std::vector<InputPoint> load_tag_file(const std::string& path, std::size_t tag_dim);
void write_tag_file(const std::string& path, const std::vector<InputPoint>& artists);
/// world.tsv-style training file: user, artist, y, w.
void write_training_file(const std::string& path, const World& w);
/// users x |X| matrix of true preferences f_j.
void write_truth_file(const std::string& path, const World& w);
World load_world_dir(const std::string& dir);
void save_world_dir(const std::string& dir, const World& w);

Eigen::MatrixXd squash(const Eigen::MatrixXd& f);
double rmse(const Eigen::MatrixXd& s, const Eigen::MatrixXd& s_hat);

/// Indices of the k largest scores; ties broken by lower index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);

struct HitsResult {
  std::vector<int> per_user;
  double average = 0.0;
};
HitsResult top_k_hits(const Eigen::MatrixXd& s, const Eigen::MatrixXd& s_hat, std::size_t k = 20);

enum class Mode { Offline, ClientServer };

/// Trains on world.train with `cfg` and returns f̂ for every (user, artist).
Eigen::MatrixXd fit_and_predict(const World& world, const MixedEffectConfig& cfg, Mode mode);

struct SweepCell {
  double alpha = 0.0;
  double lambda = 0.0;
  bool ok = false;
  std::string error;
  double rmse = 0.0;
  double top_hits = 0.0;
  std::vector<int> hits;
};

struct UserTopK {
  std::vector<std::size_t> true_top;
  std::vector<double> true_scores;
  std::vector<std::size_t> est_top;
  std::vector<double> est_scores;
};

struct SweepResult {
  std::vector<double> alphas;
  std::vector<double> lambdas;
  std::size_t k = 20;
  std::vector<SweepCell> cells;  // alpha-major
  std::vector<std::string> artist_names;
  std::optional<std::size_t> best;  // lowest RMSE among successful cells
  std::vector<UserTopK> best_top;   // per user, at the best cell

  const SweepCell& cell(std::size_t ia, std::size_t il) const { return cells[ia * lambdas.size() + il]; }
};

std::vector<double> linspace(double lo, double hi, std::size_t count);
std::vector<double> logspace(double lo_exp, double hi_exp, std::size_t count);

/// Model used for every grid point: Kbar = exp(z.z), Ktilde = z.z.
MixedEffectConfig experiment_config(double alpha, double lambda, BiasBasis bias = BiasBasis::none());

/// Evaluates every grid cell (cells run in parallel); a failing cell is
/// recorded, not propagated.
SweepResult sweep(const World& world, const std::vector<double>& alphas, const std::vector<double>& lambdas, Mode mode,
                  std::size_t k = 20, const BiasBasis& bias = BiasBasis::none());

void save_sweep_json(const std::string& path, const SweepResult& r);
SweepResult load_sweep_json(const std::string& path);

/// Writes grid.tsv, hits_histogram.tsv and topk_users.tsv into `dir`.
void emit_report(const SweepResult& r, const std::string& dir, std::size_t max_users = 3);

}  // namespace mtk::sim
