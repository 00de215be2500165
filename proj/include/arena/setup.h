#pragma once

#include <memory>
#include <string>
#include <vector>

#include "arena/config.h"
#include "arena/dataset.h"
#include "arena/evaluation.h"
#include "arena/models.h"
#include "arena/tournament.h"

namespace arena {

// Every dataset of an arena comes from config.seed; evaluation splits carry
// target labels.
struct ArenaData {
  Dataset train;
  Dataset development;
  Dataset validation;
  Dataset final_set;
};

ArenaData make_arena_data(const ArenaConfig& config);
// Fresh samples for one round, ids "round-<id>-NNNNNN".
Dataset make_round_set(const ArenaConfig& config, const std::string& round_id);

TrainOptions train_options(const ArenaConfig& config, const std::string& stream);
EvalSettings eval_settings(const ArenaConfig& config);
RoundConfig round_config(const ArenaConfig& config);

struct Baselines {
  ModelCheckpoint vanilla;
  ModelCheckpoint adv_trained;
  ModelCheckpoint frozen_noise;
  ModelCheckpoint substitute;  // attacker-side, never submitted
};

Baselines train_baselines(const ArenaConfig& config, const Dataset& train);

// Three models, five untargeted and four targeted attacks, each under its
// own team at time 0. Model locators are "models/<id>.ckpt".
std::vector<Submission> baseline_submissions();

// A state directory:
//   config, registry.log, current, models/, rounds/<id>/, artifacts/<id>/,
//   continuous/records.log
struct ArenaState {
  std::string dir;
  ArenaConfig config;
  ArenaData data;
  std::shared_ptr<const LinearSoftmaxModel> substitute;
  Registry registry;
  std::unique_ptr<SubmissionResolver> resolver;

  Evaluator evaluator();
};

// Writes config and baseline checkpoints and registers the baselines.
void init_state(const std::string& dir, const ArenaConfig& config);
ArenaState open_state(const std::string& dir, const std::vector<std::string>& overrides = {});

// Latest round's leaderboard, or the baselines as bootstrap top sets.
Leaderboard current_leaderboard(const ArenaState& state);
std::string latest_round(const ArenaState& state);
// Sample ids that appear in any round or in the validation set.
std::vector<std::string> used_sample_ids(const ArenaState& state);

// Next "r<N>" id.
std::string next_round_id(const ArenaState& state);

std::string round_report(const ArenaConfig& config, const RoundResult& result);

}  // namespace arena
