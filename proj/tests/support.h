#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <unistd.h>

#include "arena/dataset.h"
#include "arena/models.h"
#include "arena/oracle.h"
#include "arena/rng.h"

namespace testing {

using namespace arena;

// Label is a pure function of the image.
class FunctionModel : public DecisionOracle {
 public:
  FunctionModel(Shape shape, int k, std::function<int(const Image&)> f)
      : shape_(shape), k_(k), f_(std::move(f)) {}
  Shape shape() const override { return shape_; }
  int num_classes() const override { return k_; }
  int predict(const Image& image) const override { return f_(image); }

 private:
  Shape shape_;
  int k_;
  std::function<int(const Image&)> f_;
};

inline std::shared_ptr<FunctionModel> constant_model(Shape shape, int k, int label) {
  return std::make_shared<FunctionModel>(shape, k, [label](const Image&) { return label; });
}

// Answers with the label its rule gives the previous input.
class StatefulModel : public DecisionOracle {
 public:
  StatefulModel(Shape shape, int k) : shape_(shape), k_(k) {}
  Shape shape() const override { return shape_; }
  int num_classes() const override { return k_; }
  int predict(const Image& image) const override {
    std::lock_guard lock(mutex_);
    const int answer = previous_;
    double sum = 0.0;
    for (float p : image.pixels()) sum += p;
    previous_ = static_cast<int>(sum * 7.0) % k_;
    return answer;
  }

 private:
  Shape shape_;
  int k_;
  mutable std::mutex mutex_;
  mutable int previous_ = 0;
};

// Coin flips on every call.
class FlippingModel : public DecisionOracle {
 public:
  FlippingModel(Shape shape, int k) : shape_(shape), k_(k) {}
  Shape shape() const override { return shape_; }
  int num_classes() const override { return k_; }
  int predict(const Image&) const override {
    std::lock_guard lock(mutex_);
    return static_cast<int>(engine_() % static_cast<unsigned>(k_));
  }

 private:
  Shape shape_;
  int k_;
  mutable std::mutex mutex_;
  mutable std::mt19937 engine_{12345};
};

class ThrowingModel : public DecisionOracle {
 public:
  explicit ThrowingModel(Shape shape) : shape_(shape) {}
  Shape shape() const override { return shape_; }
  int num_classes() const override { return 2; }
  int predict(const Image&) const override { throw ModelError("boom"); }

 private:
  Shape shape_;
};

class SlowModel : public DecisionOracle {
 public:
  SlowModel(Shape shape, std::chrono::milliseconds delay) : shape_(shape), delay_(delay) {}
  Shape shape() const override { return shape_; }
  int num_classes() const override { return 2; }
  int predict(const Image&) const override {
    std::this_thread::sleep_for(delay_);
    return 0;
  }

 private:
  Shape shape_;
  std::chrono::milliseconds delay_;
};

inline Image random_image(Shape shape, Rng& rng) {
  std::vector<double> v(shape.size());
  for (double& x : v) x = rng.uniform();
  return Image::clipped(shape, v);
}

// Seeded reference arena shared by the attack and model tests.
struct Reference {
  Dataset train;
  Dataset development;
  Dataset test;  // 20 samples, 2 per class, with targets
  std::shared_ptr<LinearSoftmaxModel> model;
  std::shared_ptr<LinearSoftmaxModel> substitute;
};

inline Dataset targeted_copy(const Dataset& d, int offset) {
  std::vector<Sample> samples = d.samples();
  for (auto& s : samples) s.target_label = (s.true_label + offset) % d.num_classes();
  return Dataset(d.num_classes(), d.split(), std::move(samples));
}

inline const Reference& reference(std::uint64_t seed = 7) {
  static std::map<std::uint64_t, std::unique_ptr<Reference>> cache;
  static std::mutex mutex;
  std::lock_guard lock(mutex);
  auto& slot = cache[seed];
  if (!slot) {
    slot = std::make_unique<Reference>();
    SyntheticSpec spec;
    spec.seed = seed;
    slot->train = generate_synthetic_dataset(spec);
    spec.split = SplitTag::development;
    spec.per_class = 5;
    slot->development = generate_synthetic_dataset(spec);
    spec.split = SplitTag::test_final;
    spec.per_class = 2;
    slot->test = targeted_copy(generate_synthetic_dataset(spec), 3);
    TrainOptions t;
    t.seed = seed;
    slot->model = std::make_shared<LinearSoftmaxModel>(train(slot->train, t));
    t.seed = seed + 1000;
    slot->substitute = std::make_shared<LinearSoftmaxModel>(train(slot->train, t));
  }
  return *slot;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static std::atomic<int> n{0};
    path = std::filesystem::temp_directory_path() /
           ("arena-test-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

}  // namespace testing
