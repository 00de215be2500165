#include "arena/tournament.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include "arena/http.h"
#include "arena/models.h"

namespace arena {

namespace fs = std::filesystem;

const char* to_string(Track track) {
  switch (track) {
    case Track::model: return "model";
    case Track::untargeted_attack: return "untargeted-attack";
    case Track::targeted_attack: return "targeted-attack";
  }
  return "model";
}

Track parse_track(std::string_view text) {
  for (Track t : kTracks) {
    if (text == to_string(t)) return t;
  }
  throw std::invalid_argument("unknown track: " + std::string(text));
}

Task task_of(Track track) {
  return track == Track::targeted_attack ? Task::targeted : Task::untargeted;
}

const char* to_string(SubmissionKind kind) {
  switch (kind) {
    case SubmissionKind::builtin: return "builtin";
    case SubmissionKind::external_process: return "external-process";
    case SubmissionKind::http_endpoint: return "http-endpoint";
  }
  return "builtin";
}

SubmissionKind parse_submission_kind(std::string_view text) {
  for (auto k : {SubmissionKind::builtin, SubmissionKind::external_process,
                 SubmissionKind::http_endpoint}) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown submission kind: " + std::string(text));
}

const char* to_string(RegistrationStatus status) {
  switch (status) {
    case RegistrationStatus::accepted: return "accepted";
    case RegistrationStatus::rate_limited: return "rate_limited";
    case RegistrationStatus::compliance_failed: return "compliance_failed";
    case RegistrationStatus::frozen: return "frozen";
    case RegistrationStatus::invalid: return "invalid";
  }
  return "invalid";
}

RegistrationStatus parse_registration_status(std::string_view text) {
  for (auto s : {RegistrationStatus::accepted, RegistrationStatus::rate_limited,
                 RegistrationStatus::compliance_failed, RegistrationStatus::frozen,
                 RegistrationStatus::invalid}) {
    if (text == to_string(s)) return s;
  }
  throw std::invalid_argument("unknown registration status: " + std::string(text));
}

namespace {

std::string one_line(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c == '\t' || c == '\n' || c == '\r') c = ' ';
  }
  return out.empty() ? "-" : out;
}

std::vector<std::string> split_tabs(std::string_view line) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    parts.emplace_back(line.substr(start, tab == std::string_view::npos ? tab : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return parts;
}

bool valid_id(std::string_view id) {
  if (id.empty() || id == "-") return false;
  for (char c : id) {
    if (c <= ' ' || c == '/' || c == '\\' || c == 0x7f) return false;
  }
  return true;
}

}  // namespace

std::string format_registry_event(const RegistryEvent& e) {
  const Submission& s = e.submission;
  std::ostringstream out;
  out << s.registered_at << '\t' << one_line(s.id) << '\t' << to_string(s.track) << '\t'
      << one_line(s.team_id) << '\t' << to_string(s.kind) << '\t' << (s.open_source ? 1 : 0)
      << '\t' << to_string(e.status) << '\t' << one_line(s.locator) << '\t' << one_line(e.detail);
  return out.str();
}

RegistryEvent parse_registry_event(std::string_view line) {
  auto f = split_tabs(line);
  if (f.size() != 9) throw std::runtime_error("malformed registry line: " + std::string(line));
  RegistryEvent e;
  e.submission.registered_at = std::stoll(f[0]);
  e.submission.id = f[1];
  e.submission.track = parse_track(f[2]);
  e.submission.team_id = f[3];
  e.submission.kind = parse_submission_kind(f[4]);
  e.submission.open_source = f[5] == "1";
  e.status = parse_registration_status(f[6]);
  e.submission.locator = f[7] == "-" ? "" : f[7];
  e.detail = f[8] == "-" ? "" : f[8];
  return e;
}

Registry Registry::open(const std::string& log_path, int rate_limit_hours) {
  Registry r(rate_limit_hours);
  std::ifstream in(log_path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    RegistryEvent e = parse_registry_event(line);
    if (e.status == RegistrationStatus::accepted) r.accepted_.push_back(e.submission);
    r.events_.push_back(std::move(e));
  }
  r.log_path_ = log_path;
  return r;
}

void Registry::record(RegistryEvent event) {
  if (!log_path_.empty()) {
    if (auto parent = fs::path(log_path_).parent_path(); !parent.empty()) {
      fs::create_directories(parent);
    }
    std::ofstream out(log_path_, std::ios::app);
    out << format_registry_event(event) << '\n';
    if (!out) throw std::runtime_error("cannot append to " + log_path_);
  }
  if (event.status == RegistrationStatus::accepted) accepted_.push_back(event.submission);
  events_.push_back(std::move(event));
}

RegistrationResult Registry::register_submission(const Submission& s,
                                                 const ComplianceReport* compliance) {
  RegistrationResult result;
  auto reject = [&](RegistrationStatus status, std::string detail) {
    result.status = status;
    result.detail = std::move(detail);
  };
  if (frozen_) {
    reject(RegistrationStatus::frozen, "submissions are frozen during a round");
  } else if (!valid_id(s.id) || !valid_id(s.team_id)) {
    reject(RegistrationStatus::invalid, "ids must be non-empty without spaces or slashes");
  } else if (find(s.id)) {
    reject(RegistrationStatus::invalid, "duplicate submission id " + s.id);
  } else if (s.locator.find_first_of("\t\n\r") != std::string::npos) {
    reject(RegistrationStatus::invalid, "locator must be a single line without tabs");
  } else if (compliance && !compliance->pass) {
    reject(RegistrationStatus::compliance_failed, compliance->detail);
  } else {
    for (const auto& prev : accepted_) {
      if (prev.team_id != s.team_id || prev.track != s.track) continue;
      const std::int64_t since = s.registered_at - prev.registered_at;
      if (since < rate_limit_hours_) {
        reject(RegistrationStatus::rate_limited,
               std::to_string(since) + "h since " + prev.id + ", limit " +
                   std::to_string(rate_limit_hours_) + "h");
        break;
      }
    }
  }
  record(RegistryEvent{s, result.status, result.detail});
  return result;
}

RegistrationResult Registry::reject(const Submission& s, RegistrationStatus status,
                                    std::string detail) {
  if (status == RegistrationStatus::accepted) throw std::invalid_argument("reject needs a status");
  record(RegistryEvent{s, status, detail});
  return RegistrationResult{status, std::move(detail)};
}

std::vector<Submission> Registry::active(Track track) const {
  std::map<std::string, std::size_t> newest;
  for (std::size_t i = 0; i < accepted_.size(); ++i) {
    if (accepted_[i].track == track) newest[accepted_[i].team_id] = i;
  }
  std::vector<std::size_t> idx;
  for (const auto& [team, i] : newest) idx.push_back(i);
  std::sort(idx.begin(), idx.end());
  std::vector<Submission> out;
  for (auto i : idx) out.push_back(accepted_[i]);
  return out;
}

std::vector<Submission> Registry::active() const {
  std::vector<Submission> out;
  for (Track t : kTracks) {
    auto a = active(t);
    out.insert(out.end(), a.begin(), a.end());
  }
  return out;
}

const Submission* Registry::find(std::string_view id) const {
  for (const auto& s : accepted_) {
    if (s.id == id) return &s;
  }
  return nullptr;
}

std::size_t Registry::order_of(std::string_view id) const {
  for (std::size_t i = 0; i < accepted_.size(); ++i) {
    if (accepted_[i].id == id) return i;
  }
  throw std::out_of_range("no accepted submission " + std::string(id));
}

std::vector<Standing> rank_track(Track track, const std::vector<std::string>& ids,
                                 const std::map<std::string, double>& scores) {
  std::vector<Standing> out;
  for (const auto& id : ids) {
    auto it = scores.find(id);
    if (it == scores.end()) throw std::out_of_range("no score for " + id);
    out.push_back({id, it->second});
  }
  if (track == Track::model) {
    std::stable_sort(out.begin(), out.end(),
                     [](const Standing& a, const Standing& b) { return a.score > b.score; });
  } else {
    std::stable_sort(out.begin(), out.end(),
                     [](const Standing& a, const Standing& b) { return a.score < b.score; });
  }
  return out;
}

std::vector<std::string> top_ids(const std::vector<Standing>& standings, int k) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < standings.size() && static_cast<int>(i) < k; ++i) {
    out.push_back(standings[i].id);
  }
  return out;
}

std::string format_leaderboard(const Leaderboard& board) {
  std::string out;
  char buf[64];
  for (Track t : kTracks) {
    const auto& st = board.of(t);
    for (std::size_t i = 0; i < st.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.9g", st[i].score);
      out += std::string(to_string(t)) + "\t" + std::to_string(i + 1) + "\t" + st[i].id + "\t" +
             buf + "\n";
    }
  }
  return out;
}

std::string format_top(const Leaderboard& board) {
  std::string out;
  for (Track t : kTracks) {
    for (const auto& id : board.top_of(t)) out += std::string(to_string(t)) + "\t" + id + "\n";
  }
  return out;
}

Leaderboard parse_leaderboard(std::string_view standings_text, std::string_view top_text) {
  Leaderboard board;
  std::istringstream in{std::string(standings_text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 4) throw std::runtime_error("malformed leaderboard line: " + line);
    board.of(parse_track(f[0])).push_back({f[2], std::stod(f[3])});
  }
  std::istringstream tin{std::string(top_text)};
  while (std::getline(tin, line)) {
    if (line.empty()) continue;
    auto f = split_tabs(line);
    if (f.size() != 2) throw std::runtime_error("malformed top line: " + line);
    board.top_of(parse_track(f[0])).push_back(f[1]);
  }
  return board;
}

std::string render_leaderboard(const Leaderboard& board) {
  std::string out;
  if (!board.round_id.empty()) out += "round " + board.round_id + "\n";
  for (Track t : kTracks) {
    const auto& st = board.of(t);
    std::size_t width = 2;
    for (const auto& s : st) width = std::max(width, s.id.size());
    const auto& top = board.top_of(t);
    out += "\n" + std::string(to_string(t)) +
           (t == Track::model ? " (higher is better)\n" : " (lower is better)\n");
    char buf[256];
    for (std::size_t i = 0; i < st.size(); ++i) {
      const bool in_top = std::find(top.begin(), top.end(), st[i].id) != top.end();
      std::snprintf(buf, sizeof(buf), "  %3zu  %-*s  %12.6f%s\n", i + 1, static_cast<int>(width),
                    st[i].id.c_str(), st[i].score, in_top ? "  *" : "");
      out += buf;
    }
  }
  return out;
}

Dataset assign_targets(const Dataset& dataset, std::uint64_t seed) {
  const int k = dataset.num_classes();
  if (k < 2) throw std::invalid_argument("targets need at least 2 classes");
  Rng root = Rng(seed).split("targets");
  std::vector<Sample> samples = dataset.samples();
  for (auto& s : samples) {
    Rng r = root.split(s.sample_id);
    const int draw = static_cast<int>(r.uniform_int(static_cast<std::uint64_t>(k - 1)));
    s.target_label = draw < s.true_label ? draw : draw + 1;
  }
  return Dataset(k, dataset.split(), std::move(samples));
}

namespace {

// The run's meter behind the label API; budget and timeout verdicts turn
// back into the exceptions the server maps to 429 and 504.
class MeterOracle : public DecisionOracle {
 public:
  explicit MeterOracle(QueryMeter& meter) : meter_(meter) {}
  Shape shape() const override { return meter_.shape(); }
  int num_classes() const override { return meter_.num_classes(); }
  int predict(const Image& image) const override {
    std::lock_guard lock(mutex_);
    const Verdict v = meter_.predict(image);
    if (v.ok()) return v.label();
    switch (v.error()) {
      case VerdictError::budget_exhausted: throw QueryRefused("query budget exhausted");
      case VerdictError::timeout: throw OracleTimeout("model timed out");
      case VerdictError::model_error: throw ModelError("model error");
      case VerdictError::invalid_input: throw std::invalid_argument("invalid input");
    }
    throw ModelError("model error");
  }

 private:
  QueryMeter& meter_;
  mutable std::mutex mutex_;
};

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

// Exit status, or nullopt when killed at the deadline.
std::optional<int> run_with_deadline(const std::string& command,
                                     std::chrono::steady_clock::time_point deadline) {
  const pid_t pid = fork();
  if (pid < 0) throw std::runtime_error("fork failed");
  if (pid == 0) {
    setpgid(0, 0);
    dup2(2, 1);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  int status = 0;
  while (true) {
    const pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) throw std::runtime_error("waitpid failed");
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      kill(pid, SIGKILL);
      waitpid(pid, &status, 0);
      return std::nullopt;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

}  // namespace

AttackResult ExternalProcessAttack::run(AttackContext& ctx) const {
  static std::atomic<unsigned> counter{0};
  const fs::path dir = fs::temp_directory_path() /
                       ("arena-run-" + std::to_string(getpid()) + "-" + std::to_string(counter++));
  fs::create_directories(dir);
  struct Cleanup {
    fs::path p;
    ~Cleanup() {
      std::error_code ec;
      fs::remove_all(p, ec);
    }
  } cleanup{dir};

  const fs::path sample_path = dir / "sample.avt1";
  const fs::path output_path = dir / "candidate.avt1";
  save_image(sample_path.string(), ctx.sample.image);

  MeterOracle adapter(ctx.meter);
  OracleServer server(adapter, -1, std::chrono::hours(1));
  server.start();

  std::string cmd = command_ + " --oracle-url " + shell_quote(server.url()) + " --sample " +
                    shell_quote(sample_path.string()) + " --label " +
                    std::to_string(ctx.sample.true_label) + " --task " + to_string(ctx.task);
  if (ctx.task == Task::targeted && ctx.sample.target_label) {
    cmd += " --target " + std::to_string(*ctx.sample.target_label);
  }
  cmd += " --budget " + std::to_string(ctx.meter.remaining()) + " --output " +
         shell_quote(output_path.string());

  const auto status = run_with_deadline(cmd, ctx.deadline);
  server.stop();
  if (!status) throw std::runtime_error("attack process killed at the deadline");
  if (*status != 0) {
    throw std::runtime_error("attack process exited with status " + std::to_string(*status));
  }
  AttackResult result;
  result.queries_used = ctx.meter.used();
  if (fs::exists(output_path)) result.candidate = load_image(output_path.string());
  return result;
}

SubmissionResolver::SubmissionResolver(AttackResources resources, std::string base_dir,
                                       std::chrono::milliseconds http_timeout)
    : resources_(std::move(resources)), base_dir_(std::move(base_dir)), http_timeout_(http_timeout) {}

void SubmissionResolver::provide_model(const std::string& id,
                                       std::shared_ptr<const DecisionOracle> model) {
  std::lock_guard lock(mutex_);
  models_[id] = std::move(model);
}

void SubmissionResolver::provide_attack(const std::string& id,
                                        std::shared_ptr<const Attack> attack) {
  std::lock_guard lock(mutex_);
  attacks_[id] = std::move(attack);
}

std::shared_ptr<const DecisionOracle> SubmissionResolver::model(const Submission& s) {
  std::lock_guard lock(mutex_);
  if (auto it = models_.find(s.id); it != models_.end()) return it->second;
  if (s.track != Track::model) throw std::invalid_argument(s.id + " is not a model submission");
  std::shared_ptr<const DecisionOracle> m;
  switch (s.kind) {
    case SubmissionKind::builtin: {
      fs::path p(s.locator);
      if (p.is_relative() && !base_dir_.empty()) p = fs::path(base_dir_) / p;
      m = load_checkpoint(p.string()).make_oracle();
      break;
    }
    case SubmissionKind::http_endpoint:
      m = std::make_shared<HttpOracle>(s.locator, http_timeout_);
      break;
    case SubmissionKind::external_process:
      throw std::invalid_argument("model submissions are checkpoints or http endpoints");
  }
  models_[s.id] = m;
  return m;
}

std::shared_ptr<const Attack> SubmissionResolver::attack(const Submission& s) {
  std::lock_guard lock(mutex_);
  if (auto it = attacks_.find(s.id); it != attacks_.end()) return it->second;
  if (!is_attack_track(s.track)) throw std::invalid_argument(s.id + " is not an attack submission");
  std::shared_ptr<const Attack> a;
  switch (s.kind) {
    case SubmissionKind::builtin: a = make_builtin_attack(s.locator, resources_); break;
    case SubmissionKind::external_process:
      a = std::make_shared<ExternalProcessAttack>(s.locator);
      break;
    case SubmissionKind::http_endpoint:
      throw std::invalid_argument("attack submissions are builtin specs or commands");
  }
  attacks_[s.id] = a;
  return a;
}

ComplianceReport check_compliance(const DecisionOracle& model, const Dataset& probes) {
  if (probes.size() == 0) throw std::invalid_argument("compliance needs probe images");
  if (model.shape() != probes.shape()) {
    return ComplianceReport{false, {}, "model shape " + format_shape(model.shape()) +
                                           " does not match " + format_shape(probes.shape())};
  }
  std::vector<Image> images;
  for (std::size_t i = 0; i < probes.size() && i < 8; ++i) images.push_back(probes[i].image);
  ComplianceReport det = check_determinism(model, images, 3);
  std::vector<std::vector<Image>> contexts{{}, images, {images.rbegin(), images.rend()}};
  ComplianceReport stat = check_statelessness(model, images.front(), contexts);
  ComplianceReport out;
  out.pass = det.pass && stat.pass;
  for (const auto& o : det.offending) out.offending.push_back("determinism:" + o);
  for (const auto& o : stat.offending) out.offending.push_back("statelessness:" + o);
  if (!det.pass) out.detail += "determinism: " + det.detail;
  if (!stat.pass) out.detail += std::string(out.detail.empty() ? "" : "; ") + "statelessness: " + stat.detail;
  return out;
}

RegistrationResult submit(Registry& registry, SubmissionResolver& resolver, const Submission& s,
                          const Dataset& probes) {
  if (registry.frozen()) return registry.register_submission(s);
  std::optional<ComplianceReport> report;
  std::string problem;
  try {
    if (s.track == Track::model) {
      report = check_compliance(*resolver.model(s), probes);
    } else {
      resolver.attack(s);
    }
  } catch (const std::exception& e) {
    problem = e.what();
  }
  if (!problem.empty()) {
    return registry.reject(s, RegistrationStatus::invalid, "unresolvable: " + problem);
  }
  return registry.register_submission(s, report ? &*report : nullptr);
}

const RunRecord* RunCache::find(const std::string& model, const std::string& attack,
                                const std::string& sample) const {
  auto it = runs_.find({model, attack, sample});
  return it == runs_.end() ? nullptr : &it->second;
}

void RunCache::put(const RunRecord& record) {
  runs_[{record.model_id, record.attack_id, record.sample_id}] = record;
}

namespace {

using Pair = std::pair<const Submission*, const Submission*>;  // model, attack

std::vector<RunRecord> evaluate_pairs(Evaluator& ev, const std::vector<Pair>& pairs,
                                      const Dataset& samples, const std::string& round_id,
                                      const std::string& phase, RunCache& cache) {
  const std::string tag = round_id + "/" + phase;
  std::vector<std::shared_ptr<const DecisionOracle>> keep_models;
  std::vector<std::shared_ptr<const Attack>> keep_attacks;
  std::vector<EvalJob> jobs;
  for (const auto& [m, a] : pairs) {
    auto model = ev.resolver.model(*m);
    auto attack = ev.resolver.attack(*a);
    keep_models.push_back(model);
    keep_attacks.push_back(attack);
    for (const auto& s : samples.samples()) {
      if (cache.find(m->id, a->id, s.sample_id)) continue;
      jobs.push_back(EvalJob{model.get(), attack.get(), &s, task_of(a->track), m->id, a->id});
    }
  }
  const std::string artifacts = ev.state_dir.empty() ? "" : "artifacts/" + round_id;
  auto outcomes = run_jobs(jobs, ev.settings, tag, ev.workers, ev.state_dir, artifacts);
  for (const auto& o : outcomes) cache.put(o.record);

  std::vector<RunRecord> out;
  for (const auto& [m, a] : pairs) {
    for (const auto& s : samples.samples()) {
      RunRecord r = *cache.find(m->id, a->id, s.sample_id);
      r.round_id = tag;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<Pair> cross(const std::vector<Submission>& models,
                        const std::vector<Submission>& attacks) {
  std::vector<Pair> pairs;
  for (const auto& m : models) {
    for (const auto& a : attacks) pairs.emplace_back(&m, &a);
  }
  return pairs;
}

std::vector<std::string> sample_ids(const Dataset& d) {
  std::vector<std::string> ids;
  for (const auto& s : d.samples()) ids.push_back(s.sample_id);
  return ids;
}

std::vector<std::string> ids_of(const std::vector<Submission>& subs) {
  std::vector<std::string> ids;
  for (const auto& s : subs) ids.push_back(s.id);
  return ids;
}

std::string phase_of(const RunRecord& r) {
  auto slash = r.round_id.find('/');
  return slash == std::string::npos ? "" : r.round_id.substr(slash + 1);
}

std::string round_of(const RunRecord& r) {
  return r.round_id.substr(0, r.round_id.find('/'));
}

// Distinct ids in registration order.
std::vector<std::string> registration_sorted(std::set<std::string> ids, const Registry& registry) {
  std::vector<std::string> out(ids.begin(), ids.end());
  std::sort(out.begin(), out.end(), [&](const std::string& a, const std::string& b) {
    return registry.order_of(a) < registry.order_of(b);
  });
  return out;
}

struct PhaseView {
  RecordTable table;
  std::vector<std::string> models;
  std::array<std::vector<std::string>, 3> by_track;
  std::vector<std::string> samples;
};

PhaseView view_of(const std::vector<RunRecord>& records, const std::string& phase,
                  const Registry& registry) {
  PhaseView v;
  std::set<std::string> models, attacks, samples;
  for (const auto& r : records) {
    if (phase_of(r) != phase) continue;
    v.table.add(r);
    models.insert(r.model_id);
    attacks.insert(r.attack_id);
    samples.insert(r.sample_id);
  }
  v.models = registration_sorted(models, registry);
  v.by_track[index_of(Track::model)] = v.models;
  for (const auto& a : registration_sorted(attacks, registry)) {
    const Submission* s = registry.find(a);
    v.by_track[index_of(s->track)].push_back(a);
  }
  v.samples.assign(samples.begin(), samples.end());
  return v;
}

std::vector<std::string> all_attacks(const std::array<std::vector<std::string>, 3>& by_track) {
  std::vector<std::string> out = by_track[index_of(Track::untargeted_attack)];
  const auto& t = by_track[index_of(Track::targeted_attack)];
  out.insert(out.end(), t.begin(), t.end());
  return out;
}

// Full cross-product scores of one phase: standings for every track.
std::array<std::vector<Standing>, 3> full_standings(const PhaseView& v) {
  const auto attacks = all_attacks(v.by_track);
  ScoreTable scores = score_all(v.table, v.models, attacks, attacks, v.models, v.samples);
  std::array<std::vector<Standing>, 3> out;
  for (Track t : kTracks) {
    out[index_of(t)] = rank_track(t, v.by_track[index_of(t)],
                                  t == Track::model ? scores.model_scores : scores.attack_scores);
  }
  return out;
}

Leaderboard leaderboard_from_full(const PhaseView& v, int top_k, const std::string& round_id) {
  Leaderboard board;
  board.round_id = round_id;
  board.standings = full_standings(v);
  for (Track t : kTracks) board.top_of(t) = top_ids(board.of(t), top_k);
  return board;
}

}  // namespace

std::vector<RunRecord> evaluate_grid(Evaluator& ev, const std::vector<Submission>& models,
                                     const std::vector<Submission>& attacks,
                                     const Dataset& samples, const std::string& round_id,
                                     const std::string& phase, RunCache& cache) {
  return evaluate_pairs(ev, cross(models, attacks), samples, round_id, phase, cache);
}

ContinuousResult continuous_eval(Evaluator& ev, const Submission& submission,
                                 const Leaderboard& current, const Dataset& validation) {
  auto lookup = [&](const std::vector<std::string>& ids) {
    std::vector<Submission> out;
    for (const auto& id : ids) {
      const Submission* s = ev.registry.find(id);
      if (!s) throw std::invalid_argument("top-set member " + id + " is not registered");
      out.push_back(*s);
    }
    return out;
  };
  RunCache cache;
  ContinuousResult result;
  const std::string phase = submission.id;
  const auto samples = sample_ids(validation);
  if (submission.track == Track::model) {
    auto opponents = lookup(current.top_of(Track::untargeted_attack));
    auto targeted = lookup(current.top_of(Track::targeted_attack));
    opponents.insert(opponents.end(), targeted.begin(), targeted.end());
    if (opponents.empty()) throw std::invalid_argument("no top attacks to evaluate against");
    result.records = evaluate_grid(ev, {submission}, opponents, validation, "continuous", phase, cache);
    const auto ids = ids_of(opponents);
    result.score = model_score(RecordTable(result.records), submission.id, ids, samples);
  } else {
    auto opponents = lookup(current.top_of(Track::model));
    if (opponents.empty()) throw std::invalid_argument("no top models to evaluate against");
    result.records = evaluate_grid(ev, opponents, {submission}, validation, "continuous", phase, cache);
    const auto ids = ids_of(opponents);
    result.score = attack_score(RecordTable(result.records), submission.id, ids, samples);
  }
  return result;
}

RoundResult run_top5_round(Evaluator& ev, Registry& registry, const std::string& round_id,
                           const Dataset& round_set, const Dataset& validation,
                           const RoundConfig& config) {
  if (round_set.size() == 0) throw std::invalid_argument("empty round set");
  if (config.final_pool_size < config.top_k || config.top_k < 1) {
    throw std::invalid_argument("final_pool_size must be >= top_k >= 1");
  }
  registry.freeze();
  struct Thaw {
    Registry& r;
    ~Thaw() { r.unfreeze(); }
  } thaw{registry};

  std::array<std::vector<Submission>, 3> survivors;
  for (Track t : kTracks) {
    survivors[index_of(t)] = registry.active(t);
    if (survivors[index_of(t)].empty()) {
      throw std::invalid_argument(std::string("no submissions in track ") + to_string(t));
    }
  }
  auto attacks_of = [&] {
    std::vector<Submission> a = survivors[index_of(Track::untargeted_attack)];
    const auto& t = survivors[index_of(Track::targeted_attack)];
    a.insert(a.end(), t.begin(), t.end());
    return a;
  };
  auto too_many = [&] {
    for (const auto& s : survivors) {
      if (static_cast<int>(s.size()) > config.final_pool_size) return true;
    }
    return false;
  };

  RoundResult result;
  RunCache cache;
  result.degenerate = !too_many();
  std::size_t n = static_cast<std::size_t>(config.stage_start_samples);
  for (int stage = 1; too_many(); ++stage, n *= 2) {
    const Dataset subset = round_set.prefix(n);
    const std::string phase = "stage-" + std::to_string(stage);
    auto records = evaluate_grid(ev, survivors[index_of(Track::model)], attacks_of(), subset,
                                 round_id, phase, cache);
    const PhaseView v = view_of(records, phase, registry);
    const auto standings = full_standings(v);

    StageReport report;
    report.stage = stage;
    report.samples = static_cast<int>(subset.size());
    for (Track t : kTracks) {
      auto& subs = survivors[index_of(t)];
      report.entering[index_of(t)] = static_cast<int>(subs.size());
      if (static_cast<int>(subs.size()) > config.final_pool_size) {
        const auto keep_count = std::max(
            static_cast<std::size_t>(std::ceil(static_cast<double>(subs.size()) * config.survivor_fraction)),
            static_cast<std::size_t>(config.top_k));
        const auto kept = top_ids(standings[index_of(t)], static_cast<int>(keep_count));
        std::vector<Submission> next;
        for (const auto& s : subs) {
          if (std::find(kept.begin(), kept.end(), s.id) != kept.end()) next.push_back(s);
        }
        subs = std::move(next);
      }
      report.surviving[index_of(t)] = static_cast<int>(subs.size());
    }
    result.stages.push_back(report);
    result.records.insert(result.records.end(), records.begin(), records.end());
  }

  auto pool = evaluate_grid(ev, survivors[index_of(Track::model)], attacks_of(), round_set,
                            round_id, "pool", cache);
  result.records.insert(result.records.end(), pool.begin(), pool.end());
  const Leaderboard pool_board =
      leaderboard_from_full(view_of(pool, "pool", registry), config.top_k, round_id);

  auto find_all = [&](const std::vector<std::string>& ids) {
    std::vector<Submission> out;
    for (const auto& id : ids) out.push_back(*registry.find(id));
    return out;
  };
  const auto top_models = find_all(pool_board.top_of(Track::model));
  auto top_attacks = find_all(pool_board.top_of(Track::untargeted_attack));
  auto top_targeted = find_all(pool_board.top_of(Track::targeted_attack));
  top_attacks.insert(top_attacks.end(), top_targeted.begin(), top_targeted.end());

  const auto models = registry.active(Track::model);
  auto attacks = registry.active(Track::untargeted_attack);
  auto targeted = registry.active(Track::targeted_attack);
  attacks.insert(attacks.end(), targeted.begin(), targeted.end());

  std::vector<Pair> pairs = cross(models, top_attacks);
  for (const auto& p : cross(top_models, attacks)) {
    const bool seen = std::any_of(pairs.begin(), pairs.end(), [&](const Pair& q) {
      return q.first->id == p.first->id && q.second->id == p.second->id;
    });
    if (!seen) pairs.push_back(p);
  }
  const Dataset val = validation.prefix(static_cast<std::size_t>(config.validation_samples));
  auto rescore = evaluate_pairs(ev, pairs, val, round_id, "rescore", cache);
  result.records.insert(result.records.end(), rescore.begin(), rescore.end());

  result.leaderboard = recompute_leaderboard(result.records, registry, config.top_k);
  return result;
}

FinalResult run_final_eval(Evaluator& ev, const Registry& registry, const Dataset& final_set,
                           const std::vector<std::string>& used_sample_ids, int top_k,
                           const std::string& round_id) {
  const std::set<std::string> used(used_sample_ids.begin(), used_sample_ids.end());
  for (const auto& s : final_set.samples()) {
    if (used.count(s.sample_id)) {
      throw std::invalid_argument("final sample " + s.sample_id + " was used in an earlier round");
    }
  }
  FinalResult result;
  std::vector<Submission> models, attacks;
  for (const auto& s : registry.active()) {
    if (!s.open_source) {
      result.excluded.emplace_back(s.id, "not open-source");
      continue;
    }
    (s.track == Track::model ? models : attacks).push_back(s);
  }
  if (models.empty() || attacks.empty()) {
    throw std::invalid_argument("final evaluation needs an eligible model and attack");
  }
  RunCache cache;
  result.records = evaluate_grid(ev, models, attacks, final_set, round_id, "final", cache);
  result.leaderboard = recompute_leaderboard(result.records, registry, top_k);
  return result;
}

Leaderboard recompute_leaderboard(const std::vector<RunRecord>& records, const Registry& registry,
                                  int top_k) {
  if (records.empty()) throw std::invalid_argument("no records to score");
  const std::string round_id = round_of(records.front());
  bool has_final = false;
  for (const auto& r : records) has_final |= phase_of(r) == "final";
  if (has_final) return leaderboard_from_full(view_of(records, "final", registry), top_k, round_id);

  const Leaderboard pool = leaderboard_from_full(view_of(records, "pool", registry), top_k, round_id);
  const PhaseView v = view_of(records, "rescore", registry);
  if (v.samples.empty()) throw std::invalid_argument("no rescore records");
  std::vector<std::string> top_attacks = pool.top_of(Track::untargeted_attack);
  const auto& tt = pool.top_of(Track::targeted_attack);
  top_attacks.insert(top_attacks.end(), tt.begin(), tt.end());
  const auto& top_models = pool.top_of(Track::model);

  ScoreTable scores = score_all(v.table, v.models, all_attacks(v.by_track), top_attacks,
                                top_models, v.samples);
  Leaderboard board;
  board.round_id = round_id;
  for (Track t : kTracks) {
    board.of(t) = rank_track(t, v.by_track[index_of(t)],
                             t == Track::model ? scores.model_scores : scores.attack_scores);
    board.top_of(t) = pool.top_of(t);
  }
  return board;
}

void write_round(const std::string& state_dir, const std::string& round_id,
                 const std::vector<RunRecord>& records, const Leaderboard& board,
                 const std::string& report) {
  const fs::path dir = fs::path(state_dir) / "rounds" / round_id;
  fs::create_directories(dir);
  fs::remove(dir / "records.log");
  append_records((dir / "records.log").string(), records);
  write_file((dir / "leaderboard").string(), format_leaderboard(board));
  write_file((dir / "top5").string(), format_top(board));
  write_file((dir / "report").string(), report);
}

}  // namespace arena
