#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "arena/dataset.h"
#include "arena/models.h"
#include "arena/oracle.h"
#include "arena/rng.h"

namespace arena {

inline constexpr std::chrono::seconds kDefaultAttackDeadline{90};
inline constexpr int kDefaultRefineSteps = 12;

// Everything an attack run may touch. Model access goes through `meter`
// only.
struct AttackContext {
  QueryMeter& meter;
  const Sample& sample;
  Task task;
  Rng rng;
  std::chrono::steady_clock::time_point deadline;
  int refine_steps = kDefaultRefineSteps;

  AttackContext(QueryMeter& m, const Sample& s, Task t, Rng r,
                std::chrono::steady_clock::duration budget = kDefaultAttackDeadline)
      : meter(m), sample(s), task(t), rng(r), deadline(std::chrono::steady_clock::now() + budget) {}

  bool expired() const { return std::chrono::steady_clock::now() >= deadline; }
  bool stopped() const { return meter.exhausted() || expired(); }
};

struct TracePoint {
  int query_index = 0;
  double best_distance = 0.0;
};

struct AttackResult {
  std::optional<Image> candidate;
  int queries_used = 0;
  std::vector<TracePoint> trace;  // non-increasing best distance
};

// Bisection on the segment from the sample to a verified adversarial;
// returns the adversarial point nearest the sample that was confirmed.
// Stops early, keeping the best confirmed point, when the budget or
// deadline runs out.
Image binary_search_refine(AttackContext& ctx, const Image& adversarial);

struct GaussianOptions {
  int draws_per_scale = 5;
  int max_scale_exponent = 7;  // scales 0.01 * d_max * 2^j for j = 0..max
};
AttackResult additive_gaussian_attack(AttackContext& ctx, const GaussianOptions& options = {});

struct SaltPepperOptions {
  int repeats = 10;
};
AttackResult salt_and_pepper_attack(AttackContext& ctx, const SaltPepperOptions& options = {});

// Without a starting point, untargeted runs start from a salt-and-pepper
// result; targeted runs need one.
AttackResult pointwise_attack(AttackContext& ctx, const std::optional<Image>& starting_point);

struct BoundaryOptions {
  int iterations = 200;
  double spherical_step = 0.1;  // delta, relative to the current distance
  double source_step = 0.01;    // alpha, relative to the current distance
  int adapt_window = 10;
  int max_init_draws = 50;
  int max_directions = 1;  // draws per iteration until a step is accepted
};
// Targeted runs start from `pool` images of the target class.
AttackResult boundary_attack(AttackContext& ctx, const BoundaryOptions& options = {},
                             const std::vector<Image>& pool = {});

// Blends the sample toward each pool image (images of the target class)
// and keeps the smallest blend that is classified as the target.
AttackResult interpolation_attack(AttackContext& ctx, const std::vector<Image>& pool);

struct TransferOptions {
  int steps = 10;
  int epsilon_bisection_steps = 16;
};

// Candidates crafted on a substitute model. Untargeted runs ascend the
// loss of the true label, targeted runs descend the loss of the target.
Image single_step_candidate(const GradientAccess& substitute, const Sample& sample, Task task,
                            double epsilon);
Image iterative_candidate(const GradientAccess& substitute, const Sample& sample, Task task,
                          double epsilon, int steps);

AttackResult transfer_attack_single_step(AttackContext& ctx, const GradientAccess& substitute,
                                         const TransferOptions& options = {});
AttackResult transfer_attack_iterative(AttackContext& ctx, const GradientAccess& substitute,
                                       const TransferOptions& options = {});

// Resources an attack may draw on besides the oracle: a substitute with
// gradient access and the attacker-visible development images.
struct AttackResources {
  std::shared_ptr<const GradientAccess> substitute;
  std::shared_ptr<const Dataset> development;
};

class Attack {
 public:
  virtual ~Attack() = default;
  virtual bool supports(Task task) const = 0;
  virtual AttackResult run(AttackContext& ctx) const = 0;
};

// "name" or "name:key=value,key=value". Names: gaussian, salt-pepper,
// pointwise, boundary, interpolation, transfer-single, transfer-iterative,
// null (never returns a candidate). Unknown names or keys throw
// std::invalid_argument.
std::unique_ptr<Attack> make_builtin_attack(std::string_view spec,
                                            const AttackResources& resources);

struct AttackSpec {
  std::string name;
  std::map<std::string, std::string> options;
};
AttackSpec parse_attack_spec(std::string_view spec);

// Development images of `label`, in dataset order, at most `limit`.
std::vector<Image> class_pool(const Dataset& development, int label, std::size_t limit);

}  // namespace arena
