#pragma once

#include <chrono>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "arena/dataset.h"
#include "arena/tensor.h"

namespace arena {

// Raised by an oracle when the model fails to classify an input.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by an oracle whose transport gave up waiting for a decision.
class OracleTimeout : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by a remote oracle that refused the query because the
// referee-side budget is spent.
class QueryRefused : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Label-only access to a classifier. Implementations must be safe for
// concurrent calls to predict().
class DecisionOracle {
 public:
  virtual ~DecisionOracle() = default;
  virtual Shape shape() const = 0;
  virtual int num_classes() const = 0;
  virtual int predict(const Image& image) const = 0;
};

enum class VerdictError { budget_exhausted, model_error, timeout, invalid_input };

const char* to_string(VerdictError error);

class Verdict {
 public:
  static Verdict of_label(int label) { return Verdict(label, std::nullopt); }
  static Verdict of_error(VerdictError error) { return Verdict(std::nullopt, error); }

  bool ok() const { return label_.has_value(); }
  int label() const { return label_.value(); }
  VerdictError error() const { return error_.value(); }

  // Label, or the error name; used when comparing verdicts in reports.
  std::string describe() const;

  bool operator==(const Verdict&) const = default;

 private:
  Verdict(std::optional<int> label, std::optional<VerdictError> error)
      : label_(label), error_(error) {}
  std::optional<int> label_;
  std::optional<VerdictError> error_;
};

inline constexpr int kDefaultQueryBudget = 1000;
inline constexpr std::chrono::milliseconds kDefaultQueryTimeout{100};

// Single unmetered call with the referee's error mapping: ModelError and
// any other exception become model_error, OracleTimeout or a call slower
// than `timeout` becomes timeout, QueryRefused becomes budget_exhausted.
Verdict guarded_predict(const DecisionOracle& oracle, const Image& image,
                        std::chrono::milliseconds timeout = kDefaultQueryTimeout);

// Per-run query counter in front of an oracle. Refused queries are never
// forwarded and do not advance used().
class QueryMeter {
 public:
  QueryMeter(const DecisionOracle& oracle, int budget = kDefaultQueryBudget,
             std::chrono::milliseconds timeout = kDefaultQueryTimeout);

  QueryMeter(const QueryMeter&) = delete;
  QueryMeter& operator=(const QueryMeter&) = delete;

  Verdict predict(const Image& image);

  int used() const { return used_; }
  int refused() const { return refused_; }
  int budget() const { return budget_; }
  int remaining() const { return budget_ - used_; }
  bool exhausted() const { return used_ >= budget_; }
  Shape shape() const { return shape_; }
  int num_classes() const { return num_classes_; }

 private:
  const DecisionOracle& oracle_;
  Shape shape_;
  int num_classes_;
  int budget_;
  std::chrono::milliseconds timeout_;
  int used_ = 0;
  int refused_ = 0;
};

inline Verdict metered_predict(QueryMeter& meter, const Image& image) {
  return meter.predict(image);
}

enum class Task { untargeted, targeted };

const char* to_string(Task task);

// Untargeted: any label other than the true one, or a model_error/timeout
// verdict. Targeted: exactly the target label. Budget exhaustion and
// invalid input never count.
bool is_adversarial(const Verdict& verdict, const Sample& sample, Task task);

// Metered: consumes one query.
bool is_adversarial(QueryMeter& meter, const Sample& sample, const Image& candidate, Task task);

// Referee check, outside any meter.
bool is_adversarial(const DecisionOracle& oracle, const Sample& sample, const Image& candidate,
                    Task task, std::chrono::milliseconds timeout = kDefaultQueryTimeout);

struct ComplianceReport {
  bool pass = true;
  std::vector<std::string> offending;  // probe ids / context ids
  std::string detail;
};

// Queries every probe `repeats` times, interleaving probes between
// repetitions; flags probes whose verdicts differ.
ComplianceReport check_determinism(const DecisionOracle& oracle, std::span<const Image> probes,
                                   int repeats);

// Runs each context sequence followed by `probe`; passes iff the probe's
// verdict is the same after every context.
ComplianceReport check_statelessness(const DecisionOracle& oracle, const Image& probe,
                                     std::span<const std::vector<Image>> contexts);

}  // namespace arena
