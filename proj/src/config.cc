#include "arena/config.h"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "arena/rng.h"

namespace arena {

namespace {

struct Field {
  std::string key;
  std::function<std::string(const ArenaConfig&)> get;
  std::function<void(ArenaConfig&, std::string_view)> set;
};

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || end != text.data() + text.size()) {
    throw std::invalid_argument("bad value for " + std::string(key) + ": '" + std::string(text) +
                                "'");
  }
  return value;
}

template <typename T>
Field field(const char* key, T ArenaConfig::*member) {
  Field f;
  f.key = key;
  f.get = [member](const ArenaConfig& c) {
    const T& v = c.*member;
    if constexpr (std::is_same_v<T, std::string>) {
      return v;
    } else if constexpr (std::is_same_v<T, Shape>) {
      return format_shape(v);
    } else if constexpr (std::is_floating_point_v<T>) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      return std::string(buf);
    } else {
      return std::to_string(v);
    }
  };
  f.set = [member, key](ArenaConfig& c, std::string_view text) {
    if constexpr (std::is_same_v<T, std::string>) {
      c.*member = std::string(text);
    } else if constexpr (std::is_same_v<T, Shape>) {
      c.*member = parse_shape(text);
    } else {
      c.*member = parse_number<T>(key, text);
    }
  };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = {
      field("seed", &ArenaConfig::seed),
      field("classes", &ArenaConfig::classes),
      field("shape", &ArenaConfig::shape),
      field("train_per_class", &ArenaConfig::train_per_class),
      field("dev_per_class", &ArenaConfig::dev_per_class),
      field("validation_samples", &ArenaConfig::validation_samples),
      field("round_samples", &ArenaConfig::round_samples),
      field("final_samples", &ArenaConfig::final_samples),
      field("query_budget", &ArenaConfig::query_budget),
      field("query_timeout_ms", &ArenaConfig::query_timeout_ms),
      field("model_image_budget_ms", &ArenaConfig::model_image_budget_ms),
      field("attack_deadline_ms", &ArenaConfig::attack_deadline_ms),
      field("refine_steps", &ArenaConfig::refine_steps),
      field("stage_start_samples", &ArenaConfig::stage_start_samples),
      field("survivor_fraction", &ArenaConfig::survivor_fraction),
      field("final_pool_size", &ArenaConfig::final_pool_size),
      field("top_k", &ArenaConfig::top_k),
      field("train_epochs", &ArenaConfig::train_epochs),
      field("learning_rate", &ArenaConfig::learning_rate),
      field("batch_size", &ArenaConfig::batch_size),
      field("adv_epsilon", &ArenaConfig::adv_epsilon),
      field("frozen_noise_sigma", &ArenaConfig::frozen_noise_sigma),
      field("workers", &ArenaConfig::workers),
      field("rate_limit_hours", &ArenaConfig::rate_limit_hours),
      field("round_period_hours", &ArenaConfig::round_period_hours),
      field("freeze_hours", &ArenaConfig::freeze_hours),
      field("state_dir", &ArenaConfig::state_dir),
  };
  return all;
}

const Field& find_field(std::string_view key) {
  for (const auto& f : fields()) {
    if (f.key == key) return f;
  }
  throw std::invalid_argument("unknown config key: " + std::string(key));
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

void set_config_value(ArenaConfig& config, std::string_view key, std::string_view value) {
  find_field(key).set(config, value);
}

std::string get_config_value(const ArenaConfig& config, std::string_view key) {
  return find_field(key).get(config);
}

void apply_override(ArenaConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw std::invalid_argument("expected key=value, got '" + std::string(assignment) + "'");
  }
  set_config_value(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

ArenaConfig parse_config(std::string_view text, ArenaConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::string_view l = line;
    if (auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
    l = trim(l);
    if (l.empty()) continue;
    apply_override(base, l);
  }
  validate_config(base);
  return base;
}

std::string format_config(const ArenaConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + "=" + f.get(config) + "\n";
  return out;
}

ArenaConfig load_config(const std::string& path, ArenaConfig base) {
  return parse_config(read_file(path), std::move(base));
}

void save_config(const std::string& path, const ArenaConfig& config) {
  write_file(path, format_config(config));
}

void validate_config(const ArenaConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid config: ") + what);
  };
  require(c.classes >= 2, "classes must be >= 2");
  validate_shape(c.shape);
  require(c.shape.size() >= 4, "shape needs at least 4 pixels");
  require(c.train_per_class >= 1 && c.dev_per_class >= 1, "split sizes must be positive");
  require(c.validation_samples >= 1 && c.round_samples >= 1 && c.final_samples >= 1,
          "sample counts must be positive");
  require(c.query_budget >= 1, "query_budget must be >= 1");
  require(c.query_timeout_ms >= 1 && c.model_image_budget_ms >= 1 && c.attack_deadline_ms >= 1,
          "time budgets must be positive");
  require(c.refine_steps >= 0, "refine_steps must be >= 0");
  require(c.stage_start_samples >= 1, "stage_start_samples must be >= 1");
  require(c.survivor_fraction > 0.0 && c.survivor_fraction < 1.0,
          "survivor_fraction must be in (0, 1)");
  require(c.top_k >= 1, "top_k must be >= 1");
  require(c.final_pool_size >= c.top_k, "final_pool_size must be >= top_k");
  require(c.train_epochs >= 0 && c.batch_size >= 1, "bad training settings");
  require(c.adv_epsilon >= 0.0 && c.frozen_noise_sigma >= 0.0, "noise levels must be >= 0");
  require(c.workers >= 1, "workers must be >= 1");
  require(c.rate_limit_hours >= 0 && c.round_period_hours >= 1 && c.freeze_hours >= 0,
          "bad schedule");
}

std::string config_hash(const ArenaConfig& config) {
  ArenaConfig c = config;
  c.state_dir.clear();
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(Rng::hash(format_config(c))));
  return buf;
}

}  // namespace arena
