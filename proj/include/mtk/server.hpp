#pragma once

// Online server: ingests one (task, input, output, weight) triple at a time
// and keeps the disclosed database (x̆, y̆, H) and the per-task undisclosed
// state (h^j, y^j, w^j, R^j) equal to what the batch solver would compute on
// the accumulated, repeat-merged dataset.
//
// Every update is computed in full before anything is written, so a rejected
// triple leaves the state untouched.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtk/estimate.hpp"
#include "mtk/kernels.hpp"
#include "mtk/linalg.hpp"

namespace mtk {

/// Undisclosed per-task state. Slot i refers to input x̆[h[i]].
struct TaskState {
  std::vector<std::size_t> h;
  Vector y;  // merged outputs
  Vector w;  // merged weights
  SymMatrix R;

  std::size_t size() const noexcept { return h.size(); }
  friend bool operator==(const TaskState&, const TaskState&) = default;
};

/// The only state published to clients.
struct DisclosedDB {
  std::vector<InputPoint> xcheck;
  Vector ycheck;
  SymMatrix H;
  std::uint64_t epoch = 0;

  std::size_t n() const noexcept { return xcheck.size(); }
  friend bool operator==(const DisclosedDB&, const DisclosedDB&) = default;
};

struct ServerState {
  MixedEffectConfig cfg;
  DisclosedDB disclosed;
  FactorSet factors;
  std::map<TaskId, TaskState> tasks;

  friend bool operator==(const ServerState&, const ServerState&) = default;
};

enum class UpdateCase : std::uint8_t { RepeatTask = 1, RepeatGlobal = 2, NewInput = 3 };

struct UpdateReceipt {
  std::uint64_t epoch = 0;
  UpdateCase kind = UpdateCase::NewInput;
};

class Server {
 public:
  explicit Server(MixedEffectConfig cfg);
  /// Adopts a previously saved state; throws ShapeMismatch if it is inconsistent.
  explicit Server(ServerState state);

  /// Ingests one triple. Errors: NonPositiveWeight, MissingFeatures/UnknownKey,
  /// DegenerateGram, SingularUpdate. The state is unchanged on error.
  UpdateReceipt receive_example(TaskId j, const InputPoint& x, double y, double w);

  /// Repeat of an input already in task j at slot p: merges the triple into the slot.
  void apply_case1(TaskId j, std::size_t p, double y, double w);
  /// Input x̆[s] is new to task j: enlarges the task block.
  void apply_case2(TaskId j, std::size_t s, double y, double w);
  /// Input unseen by the server: grows x̆ and the factors, then applies case 2.
  void apply_case3(TaskId j, const InputPoint& x, double y, double w);

  DisclosedDB get_disclosed() const { return state_.disclosed; }
  /// a^j. Throws UnknownTask for a task that never sent a triple.
  Vector get_task_coefficients(TaskId j) const;

  /// f̂_j at each probe; unknown tasks get the shared part only.
  Vector predict(TaskId j, std::span<const InputPoint> probes) const;

  const ServerState& state() const noexcept { return state_; }
  const MixedEffectConfig& config() const noexcept { return state_.cfg; }
  const FactorSet& factors() const noexcept { return state_.factors; }
  const DisclosedDB& disclosed() const noexcept { return state_.disclosed; }
  std::uint64_t epoch() const noexcept { return state_.disclosed.epoch; }
  const TaskState* task(TaskId j) const;
  /// Inputs x̆(h^j) of task j.
  std::vector<InputPoint> task_inputs(TaskId j) const;

  /// Max-norm of R^j * [(1-alpha) Ktilde^j(h^j,h^j) + lambda diag(w^j)] - I.
  double task_inverse_residual(TaskId j) const;

 private:
  void check_triple(TaskId j, const InputPoint& x, double y, double w) const;

  ServerState state_;
  std::unordered_map<std::string, std::size_t> key_index_;
};

}  // namespace mtk
