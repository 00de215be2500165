#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "arena/tensor.h"

namespace arena {

// Flat key=value settings for an arena. Every field round-trips through
// format_config / parse_config.
struct ArenaConfig {
  std::uint64_t seed = 1;
  int classes = 10;
  Shape shape{8, 8, 1};
  int train_per_class = 20;
  int dev_per_class = 5;
  int validation_samples = 20;
  int round_samples = 20;
  int final_samples = 50;

  int query_budget = 1000;
  int query_timeout_ms = 100;
  int model_image_budget_ms = 500;
  int attack_deadline_ms = 90000;
  int refine_steps = 12;

  int stage_start_samples = 4;
  double survivor_fraction = 0.5;
  int final_pool_size = 10;
  int top_k = 5;

  int train_epochs = 100;
  double learning_rate = 0.5;
  int batch_size = 32;
  double adv_epsilon = 0.5;
  double frozen_noise_sigma = 0.1;

  int workers = 4;
  int rate_limit_hours = 24;
  int round_period_hours = 336;
  int freeze_hours = 48;

  std::string state_dir;
};

std::vector<std::string> config_keys();

// Throws std::invalid_argument for unknown keys or unparsable values.
void set_config_value(ArenaConfig& config, std::string_view key, std::string_view value);
std::string get_config_value(const ArenaConfig& config, std::string_view key);

// "key=value" lines; '#' starts a comment.
ArenaConfig parse_config(std::string_view text, ArenaConfig base = {});
std::string format_config(const ArenaConfig& config);
ArenaConfig load_config(const std::string& path, ArenaConfig base = {});
void save_config(const std::string& path, const ArenaConfig& config);

// Applies one "key=value" override.
void apply_override(ArenaConfig& config, std::string_view assignment);

void validate_config(const ArenaConfig& config);

// 16 hex digits over format_config() without state_dir.
std::string config_hash(const ArenaConfig& config);

}  // namespace arena
