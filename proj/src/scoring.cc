#include "arena/scoring.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <tuple>

namespace arena {

const char* to_string(FailureKind kind) {
  switch (kind) {
    case FailureKind::attack_error: return "attack_error";
    case FailureKind::budget_exhausted_no_adversarial: return "budget_exhausted_no_adversarial";
    case FailureKind::not_adversarial: return "not_adversarial";
    case FailureKind::timeout: return "timeout";
  }
  return "attack_error";
}

FailureKind parse_failure_kind(std::string_view text) {
  for (FailureKind k : {FailureKind::attack_error, FailureKind::budget_exhausted_no_adversarial,
                        FailureKind::not_adversarial, FailureKind::timeout}) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown failure kind: " + std::string(text));
}

std::string format_distance(double d) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", d);
  return buf;
}

double round_distance(double d) { return std::strtod(format_distance(d).c_str(), nullptr); }

std::string format_record(const RunRecord& r) {
  std::string out;
  for (const std::string* field : {&r.round_id, &r.model_id, &r.attack_id, &r.sample_id}) {
    out += *field;
    out += '\t';
  }
  out += format_distance(r.distance);
  out += '\t';
  out += std::to_string(r.queries_used);
  out += '\t';
  out += r.valid ? '1' : '0';
  out += '\t';
  out += r.failure_kind ? to_string(*r.failure_kind) : "-";
  out += '\t';
  out += r.artifact_path;
  return out;
}

RunRecord parse_record(std::string_view line) {
  std::vector<std::string> f;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    f.emplace_back(line.substr(start, tab == std::string_view::npos ? line.npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  if (f.size() != 9) {
    throw std::invalid_argument("record line needs 9 fields, got " + std::to_string(f.size()));
  }
  RunRecord r;
  r.round_id = f[0];
  r.model_id = f[1];
  r.attack_id = f[2];
  r.sample_id = f[3];
  std::size_t used = 0;
  r.distance = std::stod(f[4], &used);
  if (used != f[4].size() || !(r.distance >= 0.0)) {
    throw std::invalid_argument("bad distance field: " + f[4]);
  }
  r.queries_used = std::stoi(f[5]);
  if (f[6] != "0" && f[6] != "1") throw std::invalid_argument("bad valid field: " + f[6]);
  r.valid = f[6] == "1";
  if (f[7] != "-") r.failure_kind = parse_failure_kind(f[7]);
  if (r.valid == r.failure_kind.has_value()) {
    throw std::invalid_argument("valid flag and failure kind disagree");
  }
  r.artifact_path = f[8];
  return r;
}

std::vector<RunRecord> read_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open records log " + path);
  std::vector<RunRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_record(line));
  }
  return out;
}

void append_records(const std::string& path, std::span<const RunRecord> records) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + path);
  for (const auto& r : records) out << format_record(r) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path);
}

double l2_distance(const Image& a, const Image& b) {
  if (a.shape() != b.shape()) {
    throw TensorError(TensorErrorCode::shape_mismatch,
                      "distance between " + format_shape(a.shape()) + " and " +
                          format_shape(b.shape()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sum += diff * diff;
  }
  return std::sqrt(sum);
}

double d_max(const Shape& shape) { return std::sqrt(static_cast<double>(shape.size())); }

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty list");
  const std::size_t n = values.size();
  const auto mid = values.begin() + static_cast<long>(n / 2);
  std::nth_element(values.begin(), mid, values.end());
  const double upper = *mid;
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), mid);
  return (lower + upper) / 2.0;
}

double min_distance_per_sample(std::span<const double> distances_over_attacks) {
  if (distances_over_attacks.empty()) {
    throw std::invalid_argument("minimum over an empty attack set");
  }
  return *std::min_element(distances_over_attacks.begin(), distances_over_attacks.end());
}

RecordTable::RecordTable(std::span<const RunRecord> records) {
  for (const auto& r : records) add(r);
}

void RecordTable::add(const RunRecord& record) {
  auto key = std::make_tuple(record.model_id, record.attack_id, record.sample_id);
  if (!records_.emplace(std::move(key), record).second) {
    throw std::invalid_argument("duplicate record for " + record.model_id + " x " +
                                record.attack_id + " x " + record.sample_id);
  }
}

const RunRecord& RecordTable::at(const std::string& model, const std::string& attack,
                                 const std::string& sample) const {
  auto it = records_.find(std::make_tuple(model, attack, sample));
  if (it == records_.end()) {
    throw std::out_of_range("no record for " + model + " x " + attack + " x " + sample);
  }
  return it->second;
}

bool RecordTable::contains(const std::string& model, const std::string& attack,
                           const std::string& sample) const {
  return records_.count(std::make_tuple(model, attack, sample)) > 0;
}

double model_score(const RecordTable& records, const std::string& model,
                   std::span<const std::string> attacks, std::span<const std::string> samples) {
  if (samples.empty()) throw std::invalid_argument("model score over an empty sample set");
  std::vector<double> minima;
  minima.reserve(samples.size());
  std::vector<double> per_attack(attacks.size());
  for (const auto& s : samples) {
    for (std::size_t a = 0; a < attacks.size(); ++a) {
      per_attack[a] = records.at(model, attacks[a], s).distance;
    }
    minima.push_back(min_distance_per_sample(per_attack));
  }
  return median(std::move(minima));
}

double attack_score(const RecordTable& records, const std::string& attack,
                    std::span<const std::string> models, std::span<const std::string> samples) {
  if (samples.empty()) throw std::invalid_argument("attack score over an empty sample set");
  if (models.empty()) throw std::invalid_argument("attack score over an empty model set");
  std::vector<double> distances;
  distances.reserve(samples.size() * models.size());
  for (const auto& m : models) {
    for (const auto& s : samples) distances.push_back(records.at(m, attack, s).distance);
  }
  return median(std::move(distances));
}

ScoreTable score_all(const RecordTable& records, std::span<const std::string> models,
                     std::span<const std::string> attacks,
                     std::span<const std::string> opposing_attacks,
                     std::span<const std::string> opposing_models,
                     std::span<const std::string> samples) {
  ScoreTable t;
  t.sample_count = samples.size();
  t.model_opponents.assign(opposing_attacks.begin(), opposing_attacks.end());
  t.attack_opponents.assign(opposing_models.begin(), opposing_models.end());
  for (const auto& m : models) t.model_scores[m] = model_score(records, m, opposing_attacks, samples);
  for (const auto& a : attacks) {
    t.attack_scores[a] = attack_score(records, a, opposing_models, samples);
  }
  return t;
}

}  // namespace arena
