#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "arena/attacks.h"
#include "arena/dataset.h"
#include "arena/evaluation.h"
#include "arena/oracle.h"
#include "arena/scoring.h"

namespace arena {

enum class Track { model, untargeted_attack, targeted_attack };
inline constexpr std::array<Track, 3> kTracks{Track::model, Track::untargeted_attack,
                                              Track::targeted_attack};

const char* to_string(Track track);
Track parse_track(std::string_view text);
inline std::size_t index_of(Track t) { return static_cast<std::size_t>(t); }
inline bool is_attack_track(Track t) { return t != Track::model; }
// Task an attack track is evaluated on.
Task task_of(Track track);

enum class SubmissionKind { builtin, external_process, http_endpoint };

const char* to_string(SubmissionKind kind);
SubmissionKind parse_submission_kind(std::string_view text);

// registered_at is a logical clock in hours.
struct Submission {
  std::string id;
  Track track = Track::model;
  std::string team_id;
  std::int64_t registered_at = 0;
  SubmissionKind kind = SubmissionKind::builtin;
  std::string locator;  // checkpoint path, attack spec, command line or URL
  bool open_source = true;

  bool operator==(const Submission&) const = default;
};

enum class RegistrationStatus { accepted, rate_limited, compliance_failed, frozen, invalid };

const char* to_string(RegistrationStatus status);
RegistrationStatus parse_registration_status(std::string_view text);

struct RegistrationResult {
  RegistrationStatus status = RegistrationStatus::accepted;
  std::string detail;
  bool accepted() const { return status == RegistrationStatus::accepted; }
};

struct RegistryEvent {
  Submission submission;
  RegistrationStatus status = RegistrationStatus::accepted;
  std::string detail;
};

std::string format_registry_event(const RegistryEvent& event);
RegistryEvent parse_registry_event(std::string_view line);

// Submission log. At most one accepted submission per (team, track) per
// rate-limit window; a team's newest accepted submission supersedes its
// earlier ones. When a log path is set every event is appended to it.
class Registry {
 public:
  explicit Registry(int rate_limit_hours = 24) : rate_limit_hours_(rate_limit_hours) {}

  // Reads registry.log; a missing file gives an empty registry bound to it.
  static Registry open(const std::string& log_path, int rate_limit_hours = 24);

  // `compliance` is the checker report for model submissions.
  RegistrationResult register_submission(const Submission& submission,
                                         const ComplianceReport* compliance = nullptr);
  // Logs a submission turned away before the registry rules applied.
  RegistrationResult reject(const Submission& submission, RegistrationStatus status,
                            std::string detail);

  // Newest accepted submission per team, in registration order.
  std::vector<Submission> active(Track track) const;
  std::vector<Submission> active() const;
  const Submission* find(std::string_view id) const;
  // Position among accepted submissions; the tie-break key.
  std::size_t order_of(std::string_view id) const;

  void freeze() { frozen_ = true; }
  void unfreeze() { frozen_ = false; }
  bool frozen() const { return frozen_; }

  const std::vector<RegistryEvent>& events() const { return events_; }
  const std::string& log_path() const { return log_path_; }

 private:
  void record(RegistryEvent event);

  int rate_limit_hours_;
  bool frozen_ = false;
  std::string log_path_;
  std::vector<RegistryEvent> events_;
  std::vector<Submission> accepted_;
};

struct Standing {
  std::string id;
  double score = 0.0;
  bool operator==(const Standing&) const = default;
};

struct Leaderboard {
  std::string round_id;
  std::array<std::vector<Standing>, 3> standings;
  std::array<std::vector<std::string>, 3> top;

  std::vector<Standing>& of(Track t) { return standings[index_of(t)]; }
  const std::vector<Standing>& of(Track t) const { return standings[index_of(t)]; }
  std::vector<std::string>& top_of(Track t) { return top[index_of(t)]; }
  const std::vector<std::string>& top_of(Track t) const { return top[index_of(t)]; }
};

// Models descending, attacks ascending; ties keep the order of `ids`
// (registration order).
std::vector<Standing> rank_track(Track track, const std::vector<std::string>& ids,
                                 const std::map<std::string, double>& scores);
std::vector<std::string> top_ids(const std::vector<Standing>& standings, int k);

// "track\trank\tid\tscore" lines, score with 9 significant digits.
std::string format_leaderboard(const Leaderboard& board);
// "track\tid" lines in rank order.
std::string format_top(const Leaderboard& board);
Leaderboard parse_leaderboard(std::string_view standings_text, std::string_view top_text);
// Aligned columns for terminals.
std::string render_leaderboard(const Leaderboard& board);

// Each sample gets a target drawn uniformly from the K-1 other classes,
// from a stream keyed by (seed, sample_id).
Dataset assign_targets(const Dataset& dataset, std::uint64_t seed);

// Runs a command as an attack process:
//   <command> --oracle-url URL --sample FILE --label L --task T [--target T]
//             --budget B --output FILE
// The oracle URL serves the run's QueryMeter, so every query counts.
class ExternalProcessAttack : public Attack {
 public:
  explicit ExternalProcessAttack(std::string command) : command_(std::move(command)) {}
  bool supports(Task) const override { return true; }
  AttackResult run(AttackContext& ctx) const override;

 private:
  std::string command_;
};

// Turns submissions into runnable objects. Relative checkpoint paths are
// taken from `base_dir`; preloaded objects win over locators.
class SubmissionResolver {
 public:
  SubmissionResolver(AttackResources resources, std::string base_dir = "",
                     std::chrono::milliseconds http_timeout = std::chrono::milliseconds{500});

  void provide_model(const std::string& id, std::shared_ptr<const DecisionOracle> model);
  void provide_attack(const std::string& id, std::shared_ptr<const Attack> attack);

  std::shared_ptr<const DecisionOracle> model(const Submission& submission);
  std::shared_ptr<const Attack> attack(const Submission& submission);

  const AttackResources& resources() const { return resources_; }

 private:
  AttackResources resources_;
  std::string base_dir_;
  std::chrono::milliseconds http_timeout_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const DecisionOracle>> models_;
  std::map<std::string, std::shared_ptr<const Attack>> attacks_;
};

// Determinism over `probes` and statelessness over a few probe orderings.
ComplianceReport check_compliance(const DecisionOracle& model, const Dataset& probes);

// Compliance for models, then registration.
RegistrationResult submit(Registry& registry, SubmissionResolver& resolver,
                          const Submission& submission, const Dataset& probes);

// Everything a round needs besides the submission sets.
struct Evaluator {
  SubmissionResolver& resolver;
  const Registry& registry;
  EvalSettings settings;
  int workers = 1;
  std::string state_dir;  // artifacts go to <state_dir>/artifacts/<round>; empty keeps none
};

// Runs cached per (model, attack, sample) within one round.
class RunCache {
 public:
  const RunRecord* find(const std::string& model, const std::string& attack,
                        const std::string& sample) const;
  void put(const RunRecord& record);

 private:
  std::map<std::tuple<std::string, std::string, std::string>, RunRecord> runs_;
};

// Every model x attack x sample; attacks run on their track's task.
// Records carry round_id = "<round>/<phase>".
std::vector<RunRecord> evaluate_grid(Evaluator& evaluator, const std::vector<Submission>& models,
                                     const std::vector<Submission>& attacks,
                                     const Dataset& samples, const std::string& round_id,
                                     const std::string& phase, RunCache& cache);

struct ContinuousResult {
  double score = 0.0;
  std::vector<RunRecord> records;
};

// A model faces the top attacks of both attack tracks; an attack faces
// the top models.
ContinuousResult continuous_eval(Evaluator& evaluator, const Submission& submission,
                                 const Leaderboard& current, const Dataset& validation);

struct RoundConfig {
  int stage_start_samples = 4;
  double survivor_fraction = 0.5;
  int final_pool_size = 10;
  int top_k = 5;
  int validation_samples = 20;
};

struct StageReport {
  int stage = 0;
  int samples = 0;
  std::array<int, 3> entering{};
  std::array<int, 3> surviving{};
};

struct RoundResult {
  Leaderboard leaderboard;
  std::vector<StageReport> stages;
  bool degenerate = false;  // no halving stage was needed
  std::vector<RunRecord> records;
};

// Successive halving over the round set, full evaluation of the pool,
// then every active submission is re-scored against the new top sets on
// the validation set. The registry stays frozen for the duration.
RoundResult run_top5_round(Evaluator& evaluator, Registry& registry, const std::string& round_id,
                           const Dataset& round_set, const Dataset& validation,
                           const RoundConfig& config);

struct FinalResult {
  Leaderboard leaderboard;
  std::vector<std::pair<std::string, std::string>> excluded;  // id, reason
  std::vector<RunRecord> records;
};

// All eligible models against all eligible attacks on a set disjoint from
// `used_sample_ids`.
FinalResult run_final_eval(Evaluator& evaluator, const Registry& registry,
                           const Dataset& final_set, const std::vector<std::string>& used_sample_ids,
                           int top_k, const std::string& round_id = "final");

// Leaderboard recomputed from a round's records and the registry: pool
// records give the top sets, rescore records the standings; final records
// give both.
Leaderboard recompute_leaderboard(const std::vector<RunRecord>& records, const Registry& registry,
                                  int top_k);

// State-dir layout for one round: rounds/<id>/{records.log,leaderboard,top5,report}.
void write_round(const std::string& state_dir, const std::string& round_id,
                 const std::vector<RunRecord>& records, const Leaderboard& board,
                 const std::string& report);

}  // namespace arena
