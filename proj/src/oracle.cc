#include "arena/oracle.h"

#include <map>

namespace arena {

const char* to_string(VerdictError error) {
  switch (error) {
    case VerdictError::budget_exhausted: return "budget_exhausted";
    case VerdictError::model_error: return "model_error";
    case VerdictError::timeout: return "timeout";
    case VerdictError::invalid_input: return "invalid_input";
  }
  return "model_error";
}

const char* to_string(Task task) {
  return task == Task::targeted ? "targeted" : "untargeted";
}

std::string Verdict::describe() const {
  return ok() ? std::to_string(*label_) : std::string(to_string(*error_));
}

Verdict guarded_predict(const DecisionOracle& oracle, const Image& image,
                        std::chrono::milliseconds timeout) {
  if (image.shape() != oracle.shape()) return Verdict::of_error(VerdictError::invalid_input);
  const auto start = std::chrono::steady_clock::now();
  int label = 0;
  try {
    label = oracle.predict(image);
  } catch (const OracleTimeout&) {
    return Verdict::of_error(VerdictError::timeout);
  } catch (const QueryRefused&) {
    return Verdict::of_error(VerdictError::budget_exhausted);
  } catch (...) {
    return Verdict::of_error(VerdictError::model_error);
  }
  if (std::chrono::steady_clock::now() - start > timeout) {
    return Verdict::of_error(VerdictError::timeout);
  }
  if (label < 0 || label >= oracle.num_classes()) {
    return Verdict::of_error(VerdictError::model_error);
  }
  return Verdict::of_label(label);
}

QueryMeter::QueryMeter(const DecisionOracle& oracle, int budget,
                       std::chrono::milliseconds timeout)
    : oracle_(oracle),
      shape_(oracle.shape()),
      num_classes_(oracle.num_classes()),
      budget_(budget),
      timeout_(timeout) {
  if (budget_ < 0) throw std::invalid_argument("query budget must be non-negative");
}

Verdict QueryMeter::predict(const Image& image) {
  if (image.shape() != shape_) return Verdict::of_error(VerdictError::invalid_input);
  if (used_ >= budget_) {
    ++refused_;
    return Verdict::of_error(VerdictError::budget_exhausted);
  }
  ++used_;
  return guarded_predict(oracle_, image, timeout_);
}

bool is_adversarial(const Verdict& verdict, const Sample& sample, Task task) {
  if (verdict.ok()) {
    if (task == Task::untargeted) return verdict.label() != sample.true_label;
    return sample.target_label.has_value() && verdict.label() == *sample.target_label;
  }
  switch (verdict.error()) {
    case VerdictError::model_error:
    case VerdictError::timeout:
      return task == Task::untargeted;
    case VerdictError::budget_exhausted:
    case VerdictError::invalid_input:
      return false;
  }
  return false;
}

bool is_adversarial(QueryMeter& meter, const Sample& sample, const Image& candidate, Task task) {
  return is_adversarial(meter.predict(candidate), sample, task);
}

bool is_adversarial(const DecisionOracle& oracle, const Sample& sample, const Image& candidate,
                    Task task, std::chrono::milliseconds timeout) {
  return is_adversarial(guarded_predict(oracle, candidate, timeout), sample, task);
}

ComplianceReport check_determinism(const DecisionOracle& oracle, std::span<const Image> probes,
                                   int repeats) {
  if (probes.empty()) throw std::invalid_argument("determinism check needs at least one probe");
  if (repeats < 2) throw std::invalid_argument("determinism check needs at least 2 repeats");
  // Generous timeout: compliance is about labels, not latency.
  constexpr std::chrono::milliseconds kTimeout{10'000};
  std::vector<std::vector<std::string>> seen(probes.size());
  for (int r = 0; r < repeats; ++r) {
    for (std::size_t p = 0; p < probes.size(); ++p) {
      seen[p].push_back(guarded_predict(oracle, probes[p], kTimeout).describe());
    }
  }
  ComplianceReport report;
  for (std::size_t p = 0; p < probes.size(); ++p) {
    for (const auto& v : seen[p]) {
      if (v != seen[p].front()) {
        report.pass = false;
        report.offending.push_back("probe-" + std::to_string(p));
        report.detail += "probe-" + std::to_string(p) + ":";
        for (const auto& w : seen[p]) report.detail += " " + w;
        report.detail += "\n";
        break;
      }
    }
  }
  return report;
}

ComplianceReport check_statelessness(const DecisionOracle& oracle, const Image& probe,
                                     std::span<const std::vector<Image>> contexts) {
  if (contexts.size() < 2) {
    throw std::invalid_argument("statelessness check needs at least 2 context sequences");
  }
  constexpr std::chrono::milliseconds kTimeout{10'000};
  std::vector<std::string> answers;
  for (const auto& context : contexts) {
    for (const auto& image : context) guarded_predict(oracle, image, kTimeout);
    answers.push_back(guarded_predict(oracle, probe, kTimeout).describe());
  }
  ComplianceReport report;
  // Contexts that disagree with the majority answer are reported.
  std::map<std::string, int> votes;
  for (const auto& a : answers) ++votes[a];
  if (votes.size() > 1) {
    report.pass = false;
    std::string majority;
    int best = -1;
    for (const auto& a : answers) {
      if (votes[a] > best) {
        best = votes[a];
        majority = a;
      }
    }
    for (std::size_t c = 0; c < answers.size(); ++c) {
      if (answers[c] != majority) report.offending.push_back("context-" + std::to_string(c));
      report.detail += "context-" + std::to_string(c) + ": " + answers[c] + "\n";
    }
  }
  return report;
}

}  // namespace arena
