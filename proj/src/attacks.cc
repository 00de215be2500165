#include "arena/attacks.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "arena/scoring.h"

namespace arena {
namespace {

// Keeps the closest confirmed adversarial and the distance trace.
class BestSoFar {
 public:
  explicit BestSoFar(AttackContext& ctx) : ctx_(ctx) {}

  // One metered query; true if `image` is adversarial (and then offered).
  bool test(const Image& image) {
    if (!is_adversarial(ctx_.meter, ctx_.sample, image, ctx_.task)) return false;
    offer(image);
    return true;
  }

  void offer(const Image& image) {
    const double d = l2_distance(image, ctx_.sample.image);
    if (!best_ || d < best_distance_) {
      best_ = image;
      best_distance_ = d;
      trace_.push_back({ctx_.meter.used(), d});
    }
  }

  bool found() const { return best_.has_value(); }
  const Image& best() const { return *best_; }
  double best_distance() const { return best_distance_; }

  AttackResult finish() && {
    AttackResult r;
    r.candidate = std::move(best_);
    r.queries_used = ctx_.meter.used();
    r.trace = std::move(trace_);
    return r;
  }

 private:
  AttackContext& ctx_;
  std::optional<Image> best_;
  double best_distance_ = std::numeric_limits<double>::infinity();
  std::vector<TracePoint> trace_;
};

Image blend(const std::vector<double>& from, const std::vector<double>& to, double t,
            const Shape& shape) {
  std::vector<double> v(from.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = from[i] + t * (to[i] - from[i]);
  return Image::clipped(shape, v);
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Segment bisection shared by every attack's final polish.
Image refine_with(AttackContext& ctx, BestSoFar& best, const Image& adversarial) {
  if (adversarial == ctx.sample.image) return adversarial;
  const auto x0 = ctx.sample.image.to_double();
  const auto a = adversarial.to_double();
  const Shape shape = adversarial.shape();
  Image result = adversarial;
  double lo = 0.0;
  double hi = 1.0;
  for (int i = 0; i < ctx.refine_steps && !ctx.stopped(); ++i) {
    const double mid = 0.5 * (lo + hi);
    Image probe = blend(x0, a, mid, shape);
    if (best.test(probe)) {
      hi = mid;
      result = std::move(probe);
    } else {
      lo = mid;
    }
  }
  return result;
}

// Direction of steepest increase of the attack objective on the substitute.
std::vector<double> attack_direction(const GradientAccess& substitute, std::span<const double> x,
                                     const Sample& sample, Task task) {
  if (task == Task::targeted) {
    if (!sample.target_label) throw std::invalid_argument("targeted task without target label");
    auto g = substitute.loss_gradient(x, *sample.target_label);
    for (double& v : g) v = -v;
    return g;
  }
  return substitute.loss_gradient(x, sample.true_label);
}

// x + size * g / |g| for each coordinate, clipped to the box. Returns false
// for a zero gradient.
bool step_along(std::vector<double>& x, std::span<const double> g, double size) {
  const double n = norm2(g);
  if (n == 0.0) return false;
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = std::clamp(x[j] + size * g[j] / n, 0.0, 1.0);
  return true;
}

// Outer search shared by both transfer attacks: smallest epsilon in
// [0, d_max] whose candidate fools the true model.
template <typename MakeCandidate>
AttackResult epsilon_search(AttackContext& ctx, const TransferOptions& options,
                            MakeCandidate make) {
  BestSoFar best(ctx);
  double hi = d_max(ctx.sample.image.shape());
  auto top = make(hi);
  if (!top || ctx.stopped() || !best.test(*top)) return std::move(best).finish();
  Image adversarial = *top;
  double lo = 0.0;
  for (int i = 0; i < options.epsilon_bisection_steps && !ctx.stopped(); ++i) {
    const double mid = 0.5 * (lo + hi);
    auto probe = make(mid);
    if (probe && best.test(*probe)) {
      hi = mid;
      adversarial = std::move(*probe);
    } else {
      lo = mid;
    }
  }
  refine_with(ctx, best, adversarial);
  return std::move(best).finish();
}

}  // namespace

Image binary_search_refine(AttackContext& ctx, const Image& adversarial) {
  BestSoFar best(ctx);
  return refine_with(ctx, best, adversarial);
}

AttackResult additive_gaussian_attack(AttackContext& ctx, const GaussianOptions& options) {
  BestSoFar best(ctx);
  const Shape shape = ctx.sample.image.shape();
  const auto x0 = ctx.sample.image.to_double();
  const double per_pixel = 1.0 / std::sqrt(static_cast<double>(x0.size()));
  const double dmax = d_max(shape);
  std::vector<double> v(x0.size());
  for (int j = 0; j <= options.max_scale_exponent; ++j) {
    const double scale = 0.01 * dmax * std::ldexp(1.0, j);
    for (int draw = 0; draw < options.draws_per_scale; ++draw) {
      if (ctx.stopped()) return std::move(best).finish();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = x0[i] + scale * per_pixel * ctx.rng.normal();
      Image probe = Image::clipped(shape, v);
      if (best.test(probe)) {
        refine_with(ctx, best, probe);
        return std::move(best).finish();
      }
    }
  }
  return std::move(best).finish();
}

AttackResult salt_and_pepper_attack(AttackContext& ctx, const SaltPepperOptions& options) {
  BestSoFar best(ctx);
  const Image& clean = ctx.sample.image;
  if (ctx.stopped()) return std::move(best).finish();
  if (best.test(clean)) return std::move(best).finish();

  const Shape shape = clean.shape();
  const std::size_t n = clean.size();
  std::vector<std::size_t> order(n);
  std::vector<float> polarity(n);
  for (int rep = 0; rep < options.repeats && !ctx.stopped(); ++rep) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    ctx.rng.shuffle(order);
    for (auto& p : polarity) p = ctx.rng.uniform() < 0.5 ? 0.0f : 1.0f;
    auto noisy = [&](std::size_t count) {
      std::vector<float> px(clean.pixels().begin(), clean.pixels().end());
      for (std::size_t i = 0; i < count; ++i) px[order[i]] = polarity[i];
      return Image(shape, std::move(px));
    };
    // Escalate the flipped count 1, 2, 4, ..., n; then bisect on it.
    std::size_t lo = 0;
    std::optional<std::size_t> hi;
    for (std::size_t count = 1; !ctx.stopped(); count = std::min(n, count * 2)) {
      if (best.test(noisy(count))) {
        hi = count;
        break;
      }
      lo = count;
      if (count == n) break;
    }
    if (!hi) continue;
    while (*hi - lo > 1 && !ctx.stopped()) {
      const std::size_t mid = lo + (*hi - lo) / 2;
      if (best.test(noisy(mid))) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    refine_with(ctx, best, noisy(*hi));
  }
  return std::move(best).finish();
}

AttackResult pointwise_attack(AttackContext& ctx, const std::optional<Image>& starting_point) {
  std::optional<Image> start = starting_point;
  BestSoFar best(ctx);
  if (start) {
    if (ctx.stopped() || !best.test(*start)) return std::move(best).finish();
  } else {
    if (ctx.task == Task::targeted) return std::move(best).finish();
    AttackResult seed = salt_and_pepper_attack(ctx);
    if (!seed.candidate) return std::move(best).finish();
    start = seed.candidate;
    best.offer(*start);
  }

  const auto& x0 = ctx.sample.image.pixels();
  std::vector<float> x(start->pixels().begin(), start->pixels().end());
  const Shape shape = start->shape();
  bool changed = true;
  while (changed && !ctx.stopped()) {
    changed = false;
    std::vector<std::size_t> perturbed;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] != x0[i]) perturbed.push_back(i);
    }
    ctx.rng.shuffle(perturbed);
    for (std::size_t i : perturbed) {
      if (ctx.stopped()) break;
      const float kept = x[i];
      x[i] = x0[i];
      if (best.test(Image(shape, x))) {
        changed = true;
      } else {
        x[i] = kept;
      }
    }
  }
  return std::move(best).finish();
}

AttackResult boundary_attack(AttackContext& ctx, const BoundaryOptions& options,
                             const std::vector<Image>& pool) {
  BestSoFar best(ctx);
  const Shape shape = ctx.sample.image.shape();
  const std::size_t n = shape.size();

  std::optional<Image> start;
  if (ctx.task == Task::untargeted) {
    std::vector<double> u(n);
    for (int i = 0; i < options.max_init_draws && !start && !ctx.stopped(); ++i) {
      for (double& v : u) v = ctx.rng.uniform();
      Image probe = Image::clipped(shape, u);
      if (best.test(probe)) start = std::move(probe);
    }
  } else {
    for (std::size_t i = 0; i < pool.size() && i < static_cast<std::size_t>(options.max_init_draws) &&
                            !start && !ctx.stopped();
         ++i) {
      if (best.test(pool[i])) start = pool[i];
    }
  }
  if (!start) return std::move(best).finish();

  const auto x0 = ctx.sample.image.to_double();
  Image current = refine_with(ctx, best, *start);
  double delta = options.spherical_step;
  double alpha = options.source_step;
  int spherical_tries = 0, spherical_hits = 0, step_tries = 0, step_hits = 0;
  std::vector<double> diff(n), eta(n), candidate(n);

  for (int it = 0; it < options.iterations && !ctx.stopped(); ++it) {
    const auto x = current.to_double();
    for (std::size_t i = 0; i < n; ++i) diff[i] = x[i] - x0[i];
    const double dist = norm2(diff);
    if (dist == 0.0) break;

    for (int dir = 0; dir < options.max_directions && !ctx.stopped(); ++dir) {
      // Orthogonal step of relative size delta, projected back onto the
      // sphere of radius dist around the sample.
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        eta[i] = ctx.rng.normal();
        dot += eta[i] * diff[i];
      }
      for (std::size_t i = 0; i < n; ++i) eta[i] -= dot / (dist * dist) * diff[i];
      const double eta_norm = norm2(eta);
      if (eta_norm == 0.0) continue;
      for (std::size_t i = 0; i < n; ++i) candidate[i] = diff[i] + eta[i] * (delta * dist / eta_norm);
      const double rescale = dist / norm2(candidate);
      for (std::size_t i = 0; i < n; ++i) candidate[i] = x0[i] + candidate[i] * rescale;
      Image spherical = Image::clipped(shape, candidate);

      ++spherical_tries;
      if (!is_adversarial(ctx.meter, ctx.sample, spherical, ctx.task)) continue;
      ++spherical_hits;
      // Contract toward the sample by alpha.
      const auto s = spherical.to_double();
      for (std::size_t i = 0; i < n; ++i) candidate[i] = x0[i] + (1.0 - alpha) * (s[i] - x0[i]);
      Image stepped = Image::clipped(shape, candidate);
      if (ctx.stopped()) break;
      ++step_tries;
      if (l2_distance(stepped, ctx.sample.image) < dist && best.test(stepped)) {
        ++step_hits;
        current = std::move(stepped);
        break;
      }
    }

    if ((it + 1) % options.adapt_window == 0) {
      if (spherical_tries > 0) {
        const double rate = static_cast<double>(spherical_hits) / spherical_tries;
        delta = rate > 0.5 ? delta * 1.5 : delta / 1.5;
      }
      if (step_tries > 0) {
        const double rate = static_cast<double>(step_hits) / step_tries;
        alpha = rate > 0.25 ? alpha * 1.5 : alpha / 1.5;
      }
      alpha = std::min(alpha, 0.5);
      delta = std::min(delta, 1.0);
      spherical_tries = spherical_hits = step_tries = step_hits = 0;
    }
  }
  refine_with(ctx, best, current);
  return std::move(best).finish();
}

AttackResult interpolation_attack(AttackContext& ctx, const std::vector<Image>& pool) {
  BestSoFar best(ctx);
  if (ctx.stopped()) return std::move(best).finish();
  if (best.test(ctx.sample.image)) return std::move(best).finish();

  const auto x0 = ctx.sample.image.to_double();
  const Shape shape = ctx.sample.image.shape();
  std::optional<Image> closest;
  double closest_distance = std::numeric_limits<double>::infinity();
  for (const Image& target : pool) {
    if (ctx.stopped()) break;
    if (!best.test(target)) continue;
    const auto t = target.to_double();
    Image chosen = target;
    double lo = 0.0;
    double hi = 1.0;
    for (int i = 0; i < ctx.refine_steps && !ctx.stopped(); ++i) {
      const double mid = 0.5 * (lo + hi);
      Image probe = blend(x0, t, mid, shape);
      if (best.test(probe)) {
        hi = mid;
        chosen = std::move(probe);
      } else {
        lo = mid;
      }
    }
    const double d = l2_distance(chosen, ctx.sample.image);
    if (d < closest_distance) {
      closest_distance = d;
      closest = std::move(chosen);
    }
  }
  if (closest) refine_with(ctx, best, *closest);
  return std::move(best).finish();
}

Image single_step_candidate(const GradientAccess& substitute, const Sample& sample, Task task,
                            double epsilon) {
  std::vector<double> x = sample.image.to_double();
  const auto g = attack_direction(substitute, x, sample, task);
  step_along(x, g, epsilon);
  return Image::clipped(sample.image.shape(), x);
}

Image iterative_candidate(const GradientAccess& substitute, const Sample& sample, Task task,
                          double epsilon, int steps) {
  if (steps < 1) throw std::invalid_argument("iterative transfer needs at least one step");
  const std::vector<double> x0 = sample.image.to_double();
  std::vector<double> x = x0;
  std::vector<double> diff(x.size());
  for (int s = 0; s < steps; ++s) {
    const auto g = attack_direction(substitute, x, sample, task);
    if (!step_along(x, g, epsilon / steps)) break;
    // Project onto the L2 ball of radius epsilon around the sample; the
    // ball and the box are both convex and contain the sample, so the
    // projected point stays in the box.
    for (std::size_t j = 0; j < x.size(); ++j) diff[j] = x[j] - x0[j];
    const double n = norm2(diff);
    if (n > epsilon * (1.0 + 1e-9)) {
      for (std::size_t j = 0; j < x.size(); ++j) x[j] = x0[j] + diff[j] * (epsilon / n);
    }
  }
  return Image::clipped(sample.image.shape(), x);
}

AttackResult transfer_attack_single_step(AttackContext& ctx, const GradientAccess& substitute,
                                         const TransferOptions& options) {
  const auto g = attack_direction(substitute, ctx.sample.image.to_double(), ctx.sample, ctx.task);
  if (norm2(g) == 0.0) return BestSoFar(ctx).finish();
  return epsilon_search(ctx, options, [&](double eps) -> std::optional<Image> {
    return single_step_candidate(substitute, ctx.sample, ctx.task, eps);
  });
}

AttackResult transfer_attack_iterative(AttackContext& ctx, const GradientAccess& substitute,
                                       const TransferOptions& options) {
  const auto g = attack_direction(substitute, ctx.sample.image.to_double(), ctx.sample, ctx.task);
  if (norm2(g) == 0.0) return BestSoFar(ctx).finish();
  return epsilon_search(ctx, options, [&](double eps) -> std::optional<Image> {
    return iterative_candidate(substitute, ctx.sample, ctx.task, eps, options.steps);
  });
}

std::vector<Image> class_pool(const Dataset& development, int label, std::size_t limit) {
  std::vector<Image> pool;
  for (const auto& s : development.samples()) {
    if (pool.size() >= limit) break;
    if (s.true_label == label) pool.push_back(s.image);
  }
  return pool;
}

AttackSpec parse_attack_spec(std::string_view spec) {
  AttackSpec out;
  const auto colon = spec.find(':');
  out.name = std::string(spec.substr(0, colon));
  if (out.name.empty()) throw std::invalid_argument("empty attack name");
  if (colon == std::string_view::npos) return out;
  std::string_view rest = spec.substr(colon + 1);
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string_view item = rest.substr(0, comma);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw std::invalid_argument("attack option must be key=value: " + std::string(item));
    }
    out.options[std::string(item.substr(0, eq))] = std::string(item.substr(eq + 1));
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return out;
}

namespace {

class OptionReader {
 public:
  explicit OptionReader(const AttackSpec& spec) : spec_(spec), unused_(spec.options) {}

  int get_int(const std::string& key, int fallback) {
    auto it = unused_.find(key);
    if (it == unused_.end()) return fallback;
    const int v = std::stoi(it->second);
    unused_.erase(it);
    return v;
  }
  double get_double(const std::string& key, double fallback) {
    auto it = unused_.find(key);
    if (it == unused_.end()) return fallback;
    const double v = std::stod(it->second);
    unused_.erase(it);
    return v;
  }
  void finish() const {
    if (!unused_.empty()) {
      throw std::invalid_argument("unknown option '" + unused_.begin()->first + "' for attack " +
                                  spec_.name);
    }
  }

 private:
  const AttackSpec& spec_;
  std::map<std::string, std::string> unused_;
};

constexpr std::size_t kDefaultPoolLimit = 10;

std::vector<Image> target_pool(const AttackResources& res, const AttackContext& ctx,
                               std::size_t limit) {
  if (!res.development || !ctx.sample.target_label) return {};
  return class_pool(*res.development, *ctx.sample.target_label, limit);
}

class GaussianAttack : public Attack {
 public:
  explicit GaussianAttack(GaussianOptions o) : o_(o) {}
  bool supports(Task t) const override { return t == Task::untargeted; }
  AttackResult run(AttackContext& ctx) const override { return additive_gaussian_attack(ctx, o_); }

 private:
  GaussianOptions o_;
};

class SaltPepperAttack : public Attack {
 public:
  explicit SaltPepperAttack(SaltPepperOptions o) : o_(o) {}
  bool supports(Task t) const override { return t == Task::untargeted; }
  AttackResult run(AttackContext& ctx) const override { return salt_and_pepper_attack(ctx, o_); }

 private:
  SaltPepperOptions o_;
};

class PointwiseAttack : public Attack {
 public:
  PointwiseAttack(AttackResources r, std::size_t pool) : r_(std::move(r)), pool_(pool) {}
  bool supports(Task) const override { return true; }
  AttackResult run(AttackContext& ctx) const override {
    if (ctx.task == Task::untargeted) return pointwise_attack(ctx, std::nullopt);
    // Targeted: start from the first pool image the model assigns to the
    // target; the probing queries count against the same budget.
    for (const Image& start : target_pool(r_, ctx, pool_)) {
      if (ctx.stopped()) break;
      if (is_adversarial(ctx.meter, ctx.sample, start, ctx.task)) {
        return pointwise_attack(ctx, start);
      }
    }
    AttackResult none;
    none.queries_used = ctx.meter.used();
    return none;
  }

 private:
  AttackResources r_;
  std::size_t pool_;
};

class BoundaryAttackRunner : public Attack {
 public:
  BoundaryAttackRunner(BoundaryOptions o, AttackResources r, std::size_t pool)
      : o_(o), r_(std::move(r)), pool_(pool) {}
  bool supports(Task) const override { return true; }
  AttackResult run(AttackContext& ctx) const override {
    return boundary_attack(ctx, o_, target_pool(r_, ctx, pool_));
  }

 private:
  BoundaryOptions o_;
  AttackResources r_;
  std::size_t pool_;
};

class InterpolationAttack : public Attack {
 public:
  InterpolationAttack(AttackResources r, std::size_t pool) : r_(std::move(r)), pool_(pool) {}
  bool supports(Task t) const override { return t == Task::targeted; }
  AttackResult run(AttackContext& ctx) const override {
    return interpolation_attack(ctx, target_pool(r_, ctx, pool_));
  }

 private:
  AttackResources r_;
  std::size_t pool_;
};

class TransferAttack : public Attack {
 public:
  TransferAttack(bool iterative, TransferOptions o, AttackResources r)
      : iterative_(iterative), o_(o), r_(std::move(r)) {
    if (!r_.substitute) throw std::invalid_argument("transfer attacks need a substitute model");
  }
  bool supports(Task t) const override { return iterative_ || t == Task::untargeted; }
  AttackResult run(AttackContext& ctx) const override {
    return iterative_ ? transfer_attack_iterative(ctx, *r_.substitute, o_)
                      : transfer_attack_single_step(ctx, *r_.substitute, o_);
  }

 private:
  bool iterative_;
  TransferOptions o_;
  AttackResources r_;
};

class NullAttack : public Attack {
 public:
  bool supports(Task) const override { return true; }
  AttackResult run(AttackContext& ctx) const override {
    AttackResult r;
    r.queries_used = ctx.meter.used();
    return r;
  }
};

}  // namespace

std::unique_ptr<Attack> make_builtin_attack(std::string_view spec_text,
                                            const AttackResources& resources) {
  const AttackSpec spec = parse_attack_spec(spec_text);
  OptionReader opt(spec);
  std::unique_ptr<Attack> attack;
  if (spec.name == "gaussian") {
    GaussianOptions o;
    o.draws_per_scale = opt.get_int("draws", o.draws_per_scale);
    o.max_scale_exponent = opt.get_int("scales", o.max_scale_exponent);
    attack = std::make_unique<GaussianAttack>(o);
  } else if (spec.name == "salt-pepper") {
    SaltPepperOptions o;
    o.repeats = opt.get_int("repeats", o.repeats);
    attack = std::make_unique<SaltPepperAttack>(o);
  } else if (spec.name == "pointwise") {
    const int pool = opt.get_int("pool", static_cast<int>(kDefaultPoolLimit));
    attack = std::make_unique<PointwiseAttack>(resources, static_cast<std::size_t>(pool));
  } else if (spec.name == "boundary") {
    BoundaryOptions o;
    o.iterations = opt.get_int("iterations", o.iterations);
    o.spherical_step = opt.get_double("delta", o.spherical_step);
    o.source_step = opt.get_double("alpha", o.source_step);
    o.max_directions = opt.get_int("directions", o.max_directions);
    const int pool = opt.get_int("pool", static_cast<int>(kDefaultPoolLimit));
    attack = std::make_unique<BoundaryAttackRunner>(o, resources, static_cast<std::size_t>(pool));
  } else if (spec.name == "interpolation") {
    const int pool = opt.get_int("pool", static_cast<int>(kDefaultPoolLimit));
    attack = std::make_unique<InterpolationAttack>(resources, static_cast<std::size_t>(pool));
  } else if (spec.name == "transfer-single" || spec.name == "transfer-iterative") {
    TransferOptions o;
    o.steps = opt.get_int("steps", o.steps);
    o.epsilon_bisection_steps = opt.get_int("bisection", o.epsilon_bisection_steps);
    attack = std::make_unique<TransferAttack>(spec.name == "transfer-iterative", o, resources);
  } else if (spec.name == "null") {
    attack = std::make_unique<NullAttack>();
  } else {
    throw std::invalid_argument("unknown attack: " + spec.name);
  }
  opt.finish();
  return attack;
}

}  // namespace arena
