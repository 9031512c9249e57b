#pragma once

// Client-side estimation. A client rebuilds the shared factors from the
// disclosed inputs, recovers b and ă from (y̆, H), and obtains its own task
// coefficients a^j either from the server (active client) or by replaying its
// private triples through a local copy of the server update (passive client).

#include <cstdint>
#include <span>
#include <vector>

#include "mtk/estimate.hpp"
#include "mtk/kernels.hpp"
#include "mtk/server.hpp"

namespace mtk {

class ServiceClient;

struct ClientModel {
  TaskId task = 0;
  FactorSet factors;
  DisclosedDB disclosed;
  Vector b;
  Vector acheck;
  Vector a_task;
  std::vector<InputPoint> task_inputs;  // x̆(h^j)

  std::uint64_t epoch() const noexcept { return disclosed.epoch; }
  friend bool operator==(const ClientModel&, const ClientModel&) = default;
};

/// A client's own triples; never sent anywhere by a passive client.
struct PrivateData {
  struct Example {
    InputPoint x;
    double y = 0.0;
    double w = 1.0;
  };
  std::vector<Example> examples;
};

/// L, D, M for x̆, appended in x̆ order exactly as the server appended them.
FactorSet reconstruct_factors(std::span<const InputPoint> xcheck, const MixedEffectConfig& cfg);

/// Downloads the disclosed database and a^j and assembles the model.
ClientModel active_refresh(ServiceClient& conn, const MixedEffectConfig& cfg);

/// Builds the model from a disclosed snapshot plus private data only.
ClientModel passive_refresh(TaskId task, const DisclosedDB& snapshot, const PrivateData& data,
                            const MixedEffectConfig& cfg);

double predict_client(const ClientModel& model, const MixedEffectConfig& cfg, const InputPoint& x);

/// Logistic squashing 1 / (1 + exp(-f/2)).
double squash(double f) noexcept;
double preference_score(const ClientModel& model, const MixedEffectConfig& cfg, const InputPoint& x);

/// Max-norm residual of D L^T ă - H(y̆ + M b) + D M b.
double condensed_identity_residual(const ClientModel& model);

}  // namespace mtk
