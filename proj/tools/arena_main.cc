#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "arena/attacks.h"
#include "arena/config.h"
#include "arena/dataset.h"
#include "arena/evaluation.h"
#include "arena/http.h"
#include "arena/models.h"
#include "arena/setup.h"
#include "arena/tournament.h"

namespace fs = std::filesystem;
using namespace arena;

namespace {

// Thrown for bad flag values found after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool is_url(const std::string& s) { return s.rfind("http://", 0) == 0; }

std::unique_ptr<DecisionOracle> open_model(const std::string& locator, int timeout_ms) {
  if (is_url(locator)) {
    return std::make_unique<HttpOracle>(locator, std::chrono::milliseconds(timeout_ms));
  }
  return load_checkpoint(locator).make_oracle();
}

Task parse_task(const std::string& s) {
  if (s == "untargeted") return Task::untargeted;
  if (s == "targeted") return Task::targeted;
  throw UsageError("task must be untargeted or targeted");
}

AttackResources load_resources(const std::string& dev_dir, const std::string& substitute) {
  AttackResources r;
  if (!dev_dir.empty()) r.development = std::make_shared<Dataset>(load_dataset(dev_dir));
  if (!substitute.empty()) {
    r.substitute = std::make_shared<LinearSoftmaxModel>(load_checkpoint(substitute).linear);
  }
  return r;
}

std::string state_from(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("ARENA_STATE_DIR"); env && *env) return env;
  throw UsageError("no state directory: pass --state or set ARENA_STATE_DIR");
}

void print_leaderboard_files(const Leaderboard& board) {
  std::cout << render_leaderboard(board);
}

struct Opts {
  // shared
  std::string state;
  std::vector<std::string> sets;
  std::string config_file;
  int workers = 0;
  // gen-data
  std::uint64_t seed = 0;
  int classes = 10;
  int per_class = 20;
  std::string shape = "8x8x1";
  std::string split = "train";
  std::string prefix;
  std::string out;
  bool targets = false;
  // train-model
  std::string kind;
  std::string data;
  int epochs = 100;
  double lr = 0.5;
  int batch = 32;
  double epsilon = 0.5;
  double sigma = 0.1;
  std::uint64_t noise_seed = 0;
  // serve / compliance / eval
  std::string model;
  std::string host = "127.0.0.1";
  int port = 0;
  int budget = -1;
  int timeout_ms = 0;
  std::string probes;
  std::string attack = "boundary";
  std::string attack_cmd;
  std::string model_id;
  std::string attack_id;
  std::string samples;
  std::string task = "untargeted";
  std::string artifacts;
  std::string round_tag = "pair";
  std::string dev_data;
  std::string substitute;
  int refine = kDefaultRefineSteps;
  int deadline_ms = 90000;
  // run-attack
  std::string oracle_url;
  std::string sample;
  int label = -1;
  int target = -1;
  // registry
  std::string id;
  std::string track;
  std::string team;
  std::string locator;
  std::string submission_kind = "builtin";
  std::int64_t at = 0;
  bool closed_source = false;
  std::string round_id;
  // replay
  std::string records;
  std::string registry;
  int top_k = 0;
  bool tsv = false;
};

int cmd_gen_data(const Opts& o) {
  SyntheticSpec spec;
  spec.seed = o.seed;
  spec.num_classes = o.classes;
  spec.per_class = o.per_class;
  spec.shape = parse_shape(o.shape);
  spec.split = parse_split_tag(o.split);
  spec.id_prefix = o.prefix;
  Dataset d = generate_synthetic_dataset(spec);
  if (o.targets) d = assign_targets(d, o.seed);
  save_dataset(d, o.out);
  std::printf("%zu samples, %d classes, %s -> %s\n", d.size(), d.num_classes(),
              format_shape(d.shape()).c_str(), o.out.c_str());
  return 0;
}

int cmd_train_model(const Opts& o) {
  const Dataset d = load_dataset(o.data);
  TrainOptions t;
  t.epochs = o.epochs;
  t.learning_rate = o.lr;
  t.batch_size = o.batch;
  t.seed = o.seed;
  ModelCheckpoint c;
  c.kind = parse_model_kind(o.kind);
  if (c.kind == ModelKind::adv_trained) {
    c.linear = adversarial_train(d, t, o.epsilon);
  } else {
    c.linear = train(d, t);
  }
  if (c.kind == ModelKind::frozen_noise) {
    c.noise_seed = o.noise_seed;
    c.noise_sigma = o.sigma;
  }
  save_checkpoint(o.out, c);
  int correct = 0;
  for (const auto& s : d.samples()) correct += c.linear.predict(s.image) == s.true_label;
  std::printf("%s model, train accuracy %.4f -> %s\n", to_string(c.kind),
              static_cast<double>(correct) / static_cast<double>(d.size()), o.out.c_str());
  return 0;
}

int cmd_serve_model(const Opts& o) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  auto model = load_checkpoint(o.model).make_oracle();
  const int timeout = o.timeout_ms > 0 ? o.timeout_ms : 500;
  OracleServer server(*model, o.budget, std::chrono::milliseconds(timeout));
  const int port = server.start(o.host, o.port);
  std::printf("listening http://%s:%d\n", o.host.c_str(), port);
  std::fflush(stdout);
  int sig = 0;
  sigwait(&signals, &sig);
  server.stop();
  return 0;
}

int cmd_check_compliance(const Opts& o) {
  auto model = open_model(o.model, o.timeout_ms > 0 ? o.timeout_ms : 500);
  const Dataset probes = load_dataset(o.probes);
  const ComplianceReport r = check_compliance(*model, probes);
  std::printf("%s\n", r.pass ? "pass" : "fail");
  if (!r.pass) {
    std::printf("%s\n", r.detail.c_str());
    for (const auto& x : r.offending) std::printf("  %s\n", x.c_str());
  }
  return r.pass ? 0 : 1;
}

int cmd_run_attack(const Opts& o) {
  const Image image = load_image(o.sample);
  HttpOracle oracle(o.oracle_url, std::chrono::milliseconds(o.timeout_ms > 0 ? o.timeout_ms : 1000));
  if (o.budget < 0) throw UsageError("--budget is required");
  QueryMeter meter(oracle, o.budget, std::chrono::milliseconds(o.timeout_ms > 0 ? o.timeout_ms : 1000));
  Sample sample{image, o.label, std::nullopt, fs::path(o.sample).stem().string()};
  const Task task = parse_task(o.task);
  if (task == Task::targeted) {
    if (o.target < 0) throw UsageError("targeted runs need --target");
    sample.target_label = o.target;
  }
  auto attack = make_builtin_attack(o.attack, load_resources(o.dev_data, o.substitute));
  if (!attack->supports(task)) throw std::invalid_argument("attack does not support this task");
  AttackContext ctx(meter, sample, task, run_rng(o.seed, sample.sample_id),
                    std::chrono::milliseconds(o.deadline_ms));
  ctx.refine_steps = o.refine;
  AttackResult r = attack->run(ctx);
  if (r.candidate) save_image(o.out, *r.candidate);
  return 0;
}

int cmd_eval_pair(const Opts& o) {
  const bool http = is_url(o.model);
  auto model = open_model(o.model, o.timeout_ms > 0 ? o.timeout_ms : 500);
  const Dataset samples = load_dataset(o.samples);
  const Task task = parse_task(o.task);
  std::shared_ptr<const Attack> attack;
  std::string attack_id = o.attack_id;
  if (!o.attack_cmd.empty()) {
    attack = std::make_shared<ExternalProcessAttack>(o.attack_cmd);
    if (attack_id.empty()) attack_id = "external";
  } else {
    attack = make_builtin_attack(o.attack, load_resources(o.dev_data, o.substitute));
    if (attack_id.empty()) attack_id = parse_attack_spec(o.attack).name;
  }
  const std::string model_id =
      !o.model_id.empty() ? o.model_id : (http ? std::string("model") : fs::path(o.model).stem().string());

  EvalSettings settings;
  settings.query_budget = o.budget < 0 ? kDefaultQueryBudget : o.budget;
  settings.query_timeout = std::chrono::milliseconds(o.timeout_ms > 0 ? o.timeout_ms : (http ? 500 : 100));
  settings.attack_deadline = std::chrono::milliseconds(o.deadline_ms);
  settings.refine_steps = o.refine;
  settings.seed = o.seed;

  std::vector<EvalJob> jobs;
  for (const auto& s : samples.samples()) {
    jobs.push_back(EvalJob{model.get(), attack.get(), &s, task, model_id, attack_id});
  }
  std::string root, sub;
  if (!o.artifacts.empty()) {
    root = fs::path(o.artifacts).parent_path().string();
    if (root.empty()) root = ".";
    sub = fs::path(o.artifacts).filename().string();
  }
  auto outcomes = run_jobs(jobs, settings, o.round_tag, std::max(1, o.workers), root, sub);
  std::vector<RunRecord> records;
  for (auto& x : outcomes) records.push_back(x.record);
  if (o.out.empty()) {
    for (const auto& r : records) std::cout << format_record(r) << '\n';
  } else {
    fs::remove(o.out);
    append_records(o.out, records);
  }
  std::vector<double> d;
  int valid = 0;
  for (const auto& r : records) {
    d.push_back(r.distance);
    valid += r.valid;
  }
  std::fprintf(stderr, "%zu runs, %d valid, median distance %.6f\n", records.size(), valid,
               d.empty() ? 0.0 : median(d));
  return 0;
}

int cmd_init(const Opts& o) {
  const std::string dir = state_from(o.state);
  ArenaConfig c = o.config_file.empty() ? ArenaConfig{} : load_config(o.config_file);
  for (const auto& s : o.sets) apply_override(c, s);
  init_state(dir, c);
  std::printf("initialised %s (config %s)\n", dir.c_str(), config_hash(c).c_str());
  return 0;
}

int cmd_submit(const Opts& o) {
  ArenaState st = open_state(state_from(o.state), o.sets);
  Submission s;
  s.id = o.id;
  s.track = parse_track(o.track);
  s.team_id = o.team;
  s.registered_at = o.at;
  s.kind = parse_submission_kind(o.submission_kind);
  s.locator = o.locator;
  s.open_source = !o.closed_source;
  const RegistrationResult r = submit(st.registry, *st.resolver, s, st.data.development);
  std::printf("%s%s%s\n", to_string(r.status), r.detail.empty() ? "" : ": ", r.detail.c_str());
  if (!r.accepted()) return 1;

  Evaluator ev = st.evaluator();
  const ContinuousResult c =
      continuous_eval(ev, s, current_leaderboard(st), st.data.validation);
  fs::create_directories(fs::path(st.dir) / "continuous");
  append_records((fs::path(st.dir) / "continuous/records.log").string(), c.records);
  std::printf("provisional score %.9g over %zu runs\n", c.score, c.records.size());
  return 0;
}

int cmd_round(const Opts& o) {
  ArenaState st = open_state(state_from(o.state), o.sets);
  const std::string id = o.round_id.empty() ? next_round_id(st) : o.round_id;
  if (fs::exists(fs::path(st.dir) / "rounds" / id)) {
    throw std::invalid_argument("round " + id + " already exists");
  }
  Evaluator ev = st.evaluator();
  const Dataset round_set = make_round_set(st.config, id);
  RoundResult r =
      run_top5_round(ev, st.registry, id, round_set, st.data.validation, round_config(st.config));
  write_round(st.dir, id, r.records, r.leaderboard, round_report(st.config, r));
  write_file((fs::path(st.dir) / "current").string(), id + "\n");
  std::printf("%s", round_report(st.config, r).c_str());
  print_leaderboard_files(r.leaderboard);
  return 0;
}

int cmd_final(const Opts& o) {
  ArenaState st = open_state(state_from(o.state), o.sets);
  Evaluator ev = st.evaluator();
  FinalResult f = run_final_eval(ev, st.registry, st.data.final_set, used_sample_ids(st),
                                 st.config.top_k);
  std::string report = "config_hash\t" + config_hash(st.config) + "\ntop_k\t" +
                       std::to_string(st.config.top_k) + "\n";
  for (const auto& [sid, why] : f.excluded) report += "excluded\t" + sid + "\t" + why + "\n";
  write_round(st.dir, "final", f.records, f.leaderboard, report);
  std::printf("%s", report.c_str());
  print_leaderboard_files(f.leaderboard);
  return 0;
}

int cmd_leaderboard(const Opts& o) {
  ArenaState st = open_state(state_from(o.state), o.sets);
  Leaderboard board;
  if (o.round_id.empty()) {
    board = current_leaderboard(st);
  } else {
    const fs::path dir = fs::path(st.dir) / "rounds" / o.round_id;
    board = parse_leaderboard(read_file((dir / "leaderboard").string()),
                              read_file((dir / "top5").string()));
    board.round_id = o.round_id;
  }
  std::cout << render_leaderboard(board);
  write_file((fs::path(st.dir) / "leaderboard").string(), format_leaderboard(board));
  if (o.tsv) std::cout << "\n" << format_leaderboard(board);
  return 0;
}

int cmd_replay(const Opts& o) {
  const fs::path records_path(o.records);
  const fs::path dir = records_path.parent_path();
  const std::string registry_path =
      o.registry.empty() ? (dir / ".." / ".." / "registry.log").string() : o.registry;
  if (!fs::exists(registry_path)) throw std::runtime_error("no registry at " + registry_path);
  int top_k = o.top_k;
  if (top_k <= 0 && fs::exists(dir / "report")) {
    const std::string report = read_file((dir / "report").string());
    const auto pos = report.find("top_k\t");
    if (pos != std::string::npos) top_k = std::stoi(report.substr(pos + 6));
  }
  if (top_k <= 0) top_k = 5;
  const Registry registry = Registry::open(registry_path);
  const Leaderboard board = recompute_leaderboard(read_records(o.records), registry, top_k);

  bool same = true;
  auto compare = [&](const char* name, const std::string& got) {
    const fs::path p = dir / name;
    if (!fs::exists(p)) {
      std::printf("%s: no stored file, recomputed:\n%s", name, got.c_str());
      same = false;
      return;
    }
    const std::string stored = read_file(p.string());
    if (stored == got) {
      std::printf("%s: identical\n", name);
    } else {
      same = false;
      std::printf("%s: differs\n--- stored\n%s+++ recomputed\n%s", name, stored.c_str(), got.c_str());
    }
  };
  compare("leaderboard", format_leaderboard(board));
  compare("top5", format_top(board));
  return same ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"adversarial robustness arena"};
  app.require_subcommand(1);
  Opts o;

  auto state_opts = [&](CLI::App* c) {
    c->add_option("--state", o.state, "state directory (default $ARENA_STATE_DIR)");
    c->add_option("--set", o.sets, "config override key=value");
    c->add_option("--workers", o.workers, "parallel runs");
  };

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  gen->add_option("--seed", o.seed);
  gen->add_option("--classes", o.classes);
  gen->add_option("--per-class", o.per_class);
  gen->add_option("--shape", o.shape);
  gen->add_option("--split", o.split);
  gen->add_option("--prefix", o.prefix, "sample id prefix");
  gen->add_flag("--targets", o.targets, "assign target labels");
  gen->add_option("--out", o.out)->required();

  auto* tm = app.add_subcommand("train-model", "train a reference model");
  tm->add_option("--kind", o.kind)->required()->check(
      CLI::IsMember({"vanilla", "frozen-noise", "adv-trained"}));
  tm->add_option("--data", o.data)->required();
  tm->add_option("--out", o.out)->required();
  tm->add_option("--epochs", o.epochs);
  tm->add_option("--lr", o.lr);
  tm->add_option("--batch", o.batch);
  tm->add_option("--seed", o.seed);
  tm->add_option("--epsilon", o.epsilon);
  tm->add_option("--sigma", o.sigma);
  tm->add_option("--noise-seed", o.noise_seed);

  auto* serve = app.add_subcommand("serve-model", "serve a checkpoint over HTTP");
  serve->add_option("--model", o.model)->required();
  serve->add_option("--host", o.host);
  serve->add_option("--port", o.port);
  serve->add_option("--budget", o.budget, "shared query budget, -1 for none");
  serve->add_option("--timeout-ms", o.timeout_ms);

  auto* comp = app.add_subcommand("check-compliance", "determinism and statelessness checks");
  comp->add_option("--model", o.model, "checkpoint or URL")->required();
  comp->add_option("--probes", o.probes, "dataset directory")->required();
  comp->add_option("--timeout-ms", o.timeout_ms);

  auto* ra = app.add_subcommand("run-attack", "attack a remote model (external attack contract)");
  ra->add_option("--oracle-url", o.oracle_url)->required();
  ra->add_option("--sample", o.sample)->required();
  ra->add_option("--label", o.label)->required();
  ra->add_option("--task", o.task);
  ra->add_option("--target", o.target);
  ra->add_option("--budget", o.budget)->required();
  ra->add_option("--output", o.out)->required();
  ra->add_option("--attack", o.attack);
  ra->add_option("--seed", o.seed);
  ra->add_option("--dev-data", o.dev_data);
  ra->add_option("--substitute", o.substitute);
  ra->add_option("--refine-steps", o.refine);
  ra->add_option("--deadline-ms", o.deadline_ms);
  ra->add_option("--timeout-ms", o.timeout_ms);

  auto* ep = app.add_subcommand("eval-pair", "one model x one attack over a sample set");
  ep->add_option("--model", o.model, "checkpoint or URL")->required();
  auto* attack_opt = ep->add_option("--attack", o.attack, "builtin attack spec");
  ep->add_option("--attack-cmd", o.attack_cmd, "external attack command")->excludes(attack_opt);
  ep->add_option("--samples", o.samples)->required();
  ep->add_option("--budget", o.budget);
  ep->add_option("--task", o.task);
  ep->add_option("--seed", o.seed);
  ep->add_option("--model-id", o.model_id);
  ep->add_option("--attack-id", o.attack_id);
  ep->add_option("--round", o.round_tag);
  ep->add_option("--out", o.out, "records.log (default stdout)");
  ep->add_option("--artifacts", o.artifacts, "artifact directory");
  ep->add_option("--dev-data", o.dev_data);
  ep->add_option("--substitute", o.substitute);
  ep->add_option("--refine-steps", o.refine);
  ep->add_option("--deadline-ms", o.deadline_ms);
  ep->add_option("--timeout-ms", o.timeout_ms);
  ep->add_option("--workers", o.workers);

  auto* init = app.add_subcommand("init", "create an arena state directory with baselines");
  init->add_option("--state", o.state);
  init->add_option("--config", o.config_file);
  init->add_option("--set", o.sets);

  auto* sub = app.add_subcommand("submit", "register a submission and score it provisionally");
  state_opts(sub);
  sub->add_option("--id", o.id)->required();
  sub->add_option("--track", o.track)->required()->check(
      CLI::IsMember({"model", "untargeted-attack", "targeted-attack"}));
  sub->add_option("--team", o.team)->required();
  sub->add_option("--kind", o.submission_kind)
      ->check(CLI::IsMember({"builtin", "external-process", "http-endpoint"}));
  sub->add_option("--locator", o.locator)->required();
  sub->add_option("--at", o.at, "logical clock, hours");
  sub->add_flag("--closed-source", o.closed_source);

  auto* round = app.add_subcommand("round", "run a top-5 round");
  state_opts(round);
  round->add_option("--id", o.round_id);

  auto* fin = app.add_subcommand("final", "final all-pairs evaluation");
  state_opts(fin);

  auto* lb = app.add_subcommand("leaderboard", "show standings");
  state_opts(lb);
  lb->add_option("--round", o.round_id);
  lb->add_flag("--tsv", o.tsv, "also print the tab-separated file");

  auto* rp = app.add_subcommand("replay", "recompute a round's leaderboard from its records");
  rp->add_option("--records", o.records)->required();
  rp->add_option("--registry", o.registry);
  rp->add_option("--top-k", o.top_k);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return 2;
  }

  try {
    if (o.workers > 0) o.sets.push_back("workers=" + std::to_string(o.workers));
    if (*gen) return cmd_gen_data(o);
    if (*tm) return cmd_train_model(o);
    if (*serve) return cmd_serve_model(o);
    if (*comp) return cmd_check_compliance(o);
    if (*ra) return cmd_run_attack(o);
    if (*ep) return cmd_eval_pair(o);
    if (*init) return cmd_init(o);
    if (*sub) return cmd_submit(o);
    if (*round) return cmd_round(o);
    if (*fin) return cmd_final(o);
    if (*lb) return cmd_leaderboard(o);
    if (*rp) return cmd_replay(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
