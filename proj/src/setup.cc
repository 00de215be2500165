#include "arena/setup.h"

#include <algorithm>
#include <filesystem>
#include <set>
#include <stdexcept>

#include "arena/rng.h"

namespace arena {

namespace fs = std::filesystem;

namespace {

Dataset split_of(const ArenaConfig& c, SplitTag split, int per_class, const std::string& prefix) {
  SyntheticSpec spec;
  spec.seed = c.seed;
  spec.num_classes = c.classes;
  spec.per_class = per_class;
  spec.shape = c.shape;
  spec.split = split;
  spec.id_prefix = prefix;
  return generate_synthetic_dataset(spec);
}

Dataset evaluation_split(const ArenaConfig& c, SplitTag split, int count,
                         const std::string& prefix) {
  const int per_class = (count + c.classes - 1) / c.classes;
  Dataset d = split_of(c, split, per_class, prefix).prefix(static_cast<std::size_t>(count));
  return assign_targets(d, c.seed);
}

}  // namespace

ArenaData make_arena_data(const ArenaConfig& c) {
  return ArenaData{
      split_of(c, SplitTag::train, c.train_per_class, ""),
      split_of(c, SplitTag::development, c.dev_per_class, ""),
      evaluation_split(c, SplitTag::validation, c.validation_samples, ""),
      evaluation_split(c, SplitTag::test_final, c.final_samples, "final"),
  };
}

Dataset make_round_set(const ArenaConfig& c, const std::string& round_id) {
  return evaluation_split(c, SplitTag::test_round, c.round_samples, "round-" + round_id);
}

TrainOptions train_options(const ArenaConfig& c, const std::string& stream) {
  TrainOptions o;
  o.epochs = c.train_epochs;
  o.learning_rate = c.learning_rate;
  o.batch_size = c.batch_size;
  o.seed = Rng(c.seed).split(stream).next_u64();
  return o;
}

EvalSettings eval_settings(const ArenaConfig& c) {
  EvalSettings s;
  s.query_budget = c.query_budget;
  s.query_timeout = std::chrono::milliseconds(c.query_timeout_ms);
  s.attack_deadline = std::chrono::milliseconds(c.attack_deadline_ms);
  s.refine_steps = c.refine_steps;
  s.seed = c.seed;
  return s;
}

RoundConfig round_config(const ArenaConfig& c) {
  return RoundConfig{c.stage_start_samples, c.survivor_fraction, c.final_pool_size, c.top_k,
                     c.validation_samples};
}

Baselines train_baselines(const ArenaConfig& c, const Dataset& train_set) {
  Baselines b;
  b.vanilla.kind = ModelKind::vanilla;
  b.vanilla.linear = train(train_set, train_options(c, "model-vanilla"));
  b.adv_trained.kind = ModelKind::adv_trained;
  b.adv_trained.linear =
      adversarial_train(train_set, train_options(c, "model-adv-trained"), c.adv_epsilon);
  b.frozen_noise.kind = ModelKind::frozen_noise;
  b.frozen_noise.linear = b.vanilla.linear;
  b.frozen_noise.noise_seed = Rng(c.seed).split("model-frozen-noise").next_u64();
  b.frozen_noise.noise_sigma = c.frozen_noise_sigma;
  b.substitute.kind = ModelKind::vanilla;
  b.substitute.linear = train(train_set, train_options(c, "substitute"));
  return b;
}

std::vector<Submission> baseline_submissions() {
  std::vector<Submission> out;
  auto add = [&](const std::string& id, Track track, const std::string& locator) {
    Submission s;
    s.id = id;
    s.track = track;
    s.team_id = "baseline-" + id;
    s.registered_at = 0;
    s.kind = SubmissionKind::builtin;
    s.locator = locator;
    out.push_back(s);
  };
  for (const char* m : {"vanilla", "adv-trained", "frozen-noise"}) {
    add(m, Track::model, std::string("models/") + m + ".ckpt");
  }
  for (const char* a : {"gaussian", "salt-pepper", "boundary", "transfer-single",
                        "transfer-iterative"}) {
    add(a, Track::untargeted_attack, a);
  }
  add("interpolation-t", Track::targeted_attack, "interpolation");
  add("pointwise-t", Track::targeted_attack, "pointwise");
  add("boundary-t", Track::targeted_attack, "boundary");
  add("transfer-iterative-t", Track::targeted_attack, "transfer-iterative");
  return out;
}

Evaluator ArenaState::evaluator() {
  return Evaluator{*resolver, registry, eval_settings(config), config.workers, dir};
}

void init_state(const std::string& dir, const ArenaConfig& config) {
  validate_config(config);
  if (fs::exists(fs::path(dir) / "registry.log")) {
    throw std::runtime_error("state directory " + dir + " is already initialised");
  }
  fs::create_directories(fs::path(dir) / "models");
  ArenaConfig c = config;
  c.state_dir.clear();
  save_config((fs::path(dir) / "config").string(), c);

  const ArenaData data = make_arena_data(c);
  const Baselines b = train_baselines(c, data.train);
  save_checkpoint((fs::path(dir) / "models/vanilla.ckpt").string(), b.vanilla);
  save_checkpoint((fs::path(dir) / "models/adv-trained.ckpt").string(), b.adv_trained);
  save_checkpoint((fs::path(dir) / "models/frozen-noise.ckpt").string(), b.frozen_noise);
  save_checkpoint((fs::path(dir) / "models/substitute.ckpt").string(), b.substitute);

  ArenaState state = open_state(dir);
  for (const auto& s : baseline_submissions()) {
    auto r = submit(state.registry, *state.resolver, s, data.development);
    if (!r.accepted()) {
      throw std::runtime_error("baseline " + s.id + " rejected: " + std::string(to_string(r.status)) +
                               " " + r.detail);
    }
  }
}

ArenaState open_state(const std::string& dir, const std::vector<std::string>& overrides) {
  const fs::path root(dir);
  if (!fs::exists(root / "config")) throw std::runtime_error("no arena state in " + dir);
  ArenaConfig config = load_config((root / "config").string());
  for (const auto& o : overrides) apply_override(config, o);
  validate_config(config);
  config.state_dir = dir;

  ArenaState state{dir, config, make_arena_data(config), nullptr,
                   Registry::open((root / "registry.log").string(), config.rate_limit_hours),
                   nullptr};
  state.substitute = std::make_shared<LinearSoftmaxModel>(
      load_checkpoint((root / "models/substitute.ckpt").string()).linear);
  AttackResources resources{state.substitute,
                            std::make_shared<Dataset>(state.data.development)};
  state.resolver = std::make_unique<SubmissionResolver>(
      resources, dir, std::chrono::milliseconds(config.model_image_budget_ms));
  return state;
}

std::string latest_round(const ArenaState& state) {
  const fs::path p = fs::path(state.dir) / "current";
  if (!fs::exists(p)) return "";
  std::string id = read_file(p.string());
  while (!id.empty() && (id.back() == '\n' || id.back() == ' ')) id.pop_back();
  return id;
}

Leaderboard current_leaderboard(const ArenaState& state) {
  const std::string id = latest_round(state);
  if (!id.empty()) {
    const fs::path dir = fs::path(state.dir) / "rounds" / id;
    Leaderboard board = parse_leaderboard(read_file((dir / "leaderboard").string()),
                                          read_file((dir / "top5").string()));
    board.round_id = id;
    return board;
  }
  Leaderboard board;
  board.round_id = "bootstrap";
  for (const auto& s : baseline_submissions()) {
    if (state.registry.find(s.id)) board.top_of(s.track).push_back(s.id);
  }
  return board;
}

std::vector<std::string> used_sample_ids(const ArenaState& state) {
  std::set<std::string> ids;
  for (const auto& s : state.data.validation.samples()) ids.insert(s.sample_id);
  const fs::path rounds = fs::path(state.dir) / "rounds";
  if (fs::exists(rounds)) {
    for (const auto& entry : fs::directory_iterator(rounds)) {
      const fs::path log = entry.path() / "records.log";
      if (entry.path().filename() == "final" || !fs::exists(log)) continue;
      for (const auto& r : read_records(log.string())) ids.insert(r.sample_id);
    }
  }
  return {ids.begin(), ids.end()};
}

std::string next_round_id(const ArenaState& state) {
  for (int n = 1;; ++n) {
    const std::string id = "r" + std::to_string(n);
    if (!fs::exists(fs::path(state.dir) / "rounds" / id)) return id;
  }
}

std::string round_report(const ArenaConfig& config, const RoundResult& result) {
  std::string out = "config_hash\t" + config_hash(config) + "\n";
  out += "top_k\t" + std::to_string(config.top_k) + "\n";
  out += "degenerate\t" + std::string(result.degenerate ? "1" : "0") + "\n";
  for (const auto& s : result.stages) {
    out += "stage\t" + std::to_string(s.stage) + "\t" + std::to_string(s.samples);
    for (Track t : kTracks) {
      out += "\t" + std::to_string(s.entering[index_of(t)]) + "->" +
             std::to_string(s.surviving[index_of(t)]);
    }
    out += "\n";
  }
  return out;
}

}  // namespace arena
