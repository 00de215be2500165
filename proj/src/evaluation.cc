#include "arena/evaluation.h"

#include <atomic>
#include <exception>
#include <filesystem>
#include <thread>

namespace arena {

Rng run_rng(std::uint64_t seed, const std::string& sample_id) {
  return Rng(seed).split("attack-run").split(sample_id);
}

RunOutcome evaluate_run(const DecisionOracle& model, const Attack& attack, const Sample& sample,
                        Task task, const EvalSettings& settings) {
  if (task == Task::targeted && !sample.target_label) {
    throw std::invalid_argument("targeted run on sample " + sample.sample_id +
                                " without a target label");
  }
  RunOutcome out;
  QueryMeter meter(model, settings.query_budget, settings.query_timeout);
  AttackContext ctx(meter, sample, task, run_rng(settings.seed, sample.sample_id),
                    settings.attack_deadline);
  ctx.refine_steps = settings.refine_steps;

  std::optional<FailureKind> failure;
  const auto started = std::chrono::steady_clock::now();
  if (!attack.supports(task)) {
    failure = FailureKind::attack_error;
  } else {
    try {
      out.result = attack.run(ctx);
    } catch (const std::exception&) {
      failure = FailureKind::attack_error;
    }
  }
  if (!failure && std::chrono::steady_clock::now() - started > settings.attack_deadline) {
    failure = FailureKind::timeout;
  }
  const auto& candidate = out.result.candidate;
  if (!failure) {
    if (!candidate) {
      failure = meter.exhausted() ? FailureKind::budget_exhausted_no_adversarial
                                  : FailureKind::attack_error;
    } else if (candidate->shape() != sample.image.shape() ||
               !is_adversarial(model, sample, *candidate, task, settings.query_timeout)) {
      failure = FailureKind::not_adversarial;
    }
  }

  RunRecord& r = out.record;
  r.sample_id = sample.sample_id;
  r.queries_used = meter.used();
  r.valid = !failure;
  r.failure_kind = failure;
  if (failure) {
    r.distance = round_distance(d_max(sample.image.shape()));
    out.artifact = grey_image(sample.image.shape());
  } else {
    r.distance = round_distance(l2_distance(*candidate, sample.image));
    out.artifact = *candidate;
  }
  return out;
}

std::string artifact_name(const std::string& model_id, const std::string& attack_id,
                          const std::string& sample_id) {
  return model_id + "__" + attack_id + "__" + sample_id + ".avt1";
}

std::vector<RunOutcome> run_jobs(std::span<const EvalJob> jobs, const EvalSettings& settings,
                                 const std::string& round_id, int workers,
                                 const std::string& state_root,
                                 const std::string& artifact_subdir) {
  namespace fs = std::filesystem;
  std::vector<RunOutcome> outcomes(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  if (!state_root.empty()) fs::create_directories(fs::path(state_root) / artifact_subdir);

  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      const EvalJob& job = jobs[i];
      try {
        RunOutcome o = evaluate_run(*job.model, *job.attack, *job.sample, job.task, settings);
        o.record.round_id = round_id;
        o.record.model_id = job.model_id;
        o.record.attack_id = job.attack_id;
        if (!state_root.empty()) {
          const fs::path rel =
              fs::path(artifact_subdir) / artifact_name(job.model_id, job.attack_id,
                                                        job.sample->sample_id);
          save_image((fs::path(state_root) / rel).string(), o.artifact);
          o.record.artifact_path = rel.string();
        } else {
          o.record.artifact_path = "-";
        }
        outcomes[i] = std::move(o);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  const int n = std::max(1, std::min<int>(workers, static_cast<int>(jobs.size())));
  if (n == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n));
    for (int t = 0; t < n; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return outcomes;
}

}  // namespace arena
