#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "arena/tensor.h"

namespace arena {

enum class FailureKind { attack_error, budget_exhausted_no_adversarial, not_adversarial, timeout };

const char* to_string(FailureKind kind);
FailureKind parse_failure_kind(std::string_view text);

// Outcome of one attack on one model for one sample. Failed runs carry
// distance == d_max(shape) and the grey image as artifact.
struct RunRecord {
  std::string round_id;
  std::string model_id;
  std::string attack_id;
  std::string sample_id;
  double distance = 0.0;
  int queries_used = 0;
  bool valid = false;
  std::optional<FailureKind> failure_kind;
  std::string artifact_path;

  bool operator==(const RunRecord&) const = default;
};

// Distances are persisted with 9 significant digits; records keep the
// rounded value so scores recomputed from a log match the originals.
double round_distance(double d);
std::string format_distance(double d);

std::string format_record(const RunRecord& record);
RunRecord parse_record(std::string_view line);
std::vector<RunRecord> read_records(const std::string& path);
void append_records(const std::string& path, std::span<const RunRecord> records);

double l2_distance(const Image& a, const Image& b);
double d_max(const Shape& shape);

// Even-length lists average the two middle order statistics.
double median(std::vector<double> values);

// Minimum recorded distance over the attack set for one (model, sample).
double min_distance_per_sample(std::span<const double> distances_over_attacks);

// Lookup of d_a(s, m) over a set of records; each (model, attack, sample)
// triple must be unique.
class RecordTable {
 public:
  RecordTable() = default;
  explicit RecordTable(std::span<const RunRecord> records);

  void add(const RunRecord& record);
  const RunRecord& at(const std::string& model, const std::string& attack,
                      const std::string& sample) const;
  bool contains(const std::string& model, const std::string& attack,
                const std::string& sample) const;
  std::size_t size() const { return records_.size(); }

 private:
  std::map<std::tuple<std::string, std::string, std::string>, RunRecord> records_;
};

// Median over samples of the per-sample minimum over `attacks`.
double model_score(const RecordTable& records, const std::string& model,
                   std::span<const std::string> attacks, std::span<const std::string> samples);

// Median over the multiset {d_a(s, m) : s in samples, m in models}.
double attack_score(const RecordTable& records, const std::string& attack,
                    std::span<const std::string> models, std::span<const std::string> samples);

struct ScoreTable {
  std::map<std::string, double> model_scores;
  std::map<std::string, double> attack_scores;
  std::size_t sample_count = 0;
  std::vector<std::string> model_opponents;   // attacks each model faced
  std::vector<std::string> attack_opponents;  // models each attack faced
};

// Scores every listed model against `opposing_attacks` and every listed
// attack against `opposing_models`.
ScoreTable score_all(const RecordTable& records, std::span<const std::string> models,
                     std::span<const std::string> attacks,
                     std::span<const std::string> opposing_attacks,
                     std::span<const std::string> opposing_models,
                     std::span<const std::string> samples);

}  // namespace arena
