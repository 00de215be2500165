#pragma once

#include <chrono>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "arena/attacks.h"
#include "arena/oracle.h"
#include "arena/scoring.h"

namespace arena {

struct EvalSettings {
  int query_budget = kDefaultQueryBudget;
  std::chrono::milliseconds query_timeout = kDefaultQueryTimeout;
  std::chrono::milliseconds attack_deadline = kDefaultAttackDeadline;
  int refine_steps = kDefaultRefineSteps;
  std::uint64_t seed = 0;
};

struct RunOutcome {
  RunRecord record;
  Image artifact;  // confirmed adversarial, or the grey image for failures
  AttackResult result;
};

// The run's random stream depends only on (seed, sample_id), so identical
// attacks see identical draws whatever model or attack id they carry.
Rng run_rng(std::uint64_t seed, const std::string& sample_id);

// Referee for one (model, attack, sample) run: fresh QueryMeter, attack
// run under the deadline, then an unmetered validity check of the
// returned candidate. Failures score d_max and register the grey image.
RunOutcome evaluate_run(const DecisionOracle& model, const Attack& attack, const Sample& sample,
                        Task task, const EvalSettings& settings);

struct EvalJob {
  const DecisionOracle* model = nullptr;
  const Attack* attack = nullptr;
  const Sample* sample = nullptr;
  Task task = Task::untargeted;
  std::string model_id;
  std::string attack_id;
};

// Runs jobs on up to `workers` threads; outcomes come back in job order
// with round_id/model_id/attack_id/sample_id filled in. When
// `artifact_root` is non-empty artifacts are written to
// <artifact_root>/<model>__<attack>__<sample>.avt1 and the path is
// recorded relative to `state_root`.
std::vector<RunOutcome> run_jobs(std::span<const EvalJob> jobs, const EvalSettings& settings,
                                 const std::string& round_id, int workers,
                                 const std::string& state_root = "",
                                 const std::string& artifact_subdir = "");

std::string artifact_name(const std::string& model_id, const std::string& attack_id,
                          const std::string& sample_id);

}  // namespace arena
