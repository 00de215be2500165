#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "arena/dataset.h"
#include "arena/oracle.h"

namespace arena {

enum class ModelKind { vanilla, frozen_noise, adv_trained };

const char* to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view text);

// Capability of the reference models only: input gradient of the
// cross-entropy loss. Never exposed across the oracle boundary.
class GradientAccess {
 public:
  virtual ~GradientAccess() = default;
  virtual std::vector<double> loss_gradient(std::span<const double> x, int label) const = 0;
};

// Multinomial logistic regression: predict(x) = argmax_k (W x + b)_k with
// ties resolved toward the lowest class index.
class LinearSoftmaxModel : public DecisionOracle, public GradientAccess {
 public:
  LinearSoftmaxModel() = default;
  LinearSoftmaxModel(Shape shape, int num_classes);  // W = 0, b = 0
  // `weights` is K x D row-major.
  LinearSoftmaxModel(Shape shape, int num_classes, std::vector<double> weights,
                     std::vector<double> bias);

  Shape shape() const override { return shape_; }
  int num_classes() const override { return num_classes_; }
  int predict(const Image& image) const override;

  std::size_t input_size() const { return shape_.size(); }
  const std::vector<double>& weights() const { return weights_; }
  const std::vector<double>& bias() const { return bias_; }
  std::span<const double> weight_row(int k) const;

  std::vector<double> logits(std::span<const double> x) const;
  int predict_flat(std::span<const double> x) const;
  // Cross-entropy of one example; probabilities floored at 1e-12.
  double loss(std::span<const double> x, int label) const;
  std::vector<double> loss_gradient(std::span<const double> x, int label) const override;

  bool trained() const { return trained_; }
  void set_trained(bool trained) { trained_ = trained; }

  bool operator==(const LinearSoftmaxModel& other) const {
    return shape_ == other.shape_ && num_classes_ == other.num_classes_ &&
           weights_ == other.weights_ && bias_ == other.bias_;
  }

 private:
  friend class Trainer;
  Shape shape_;
  int num_classes_ = 0;
  std::vector<double> weights_;
  std::vector<double> bias_;
  bool trained_ = false;
};

std::vector<double> softmax(std::span<const double> logits);

// Decides on clip(x + mask) where the mask is a Gaussian draw fixed at
// construction from (noise_seed, sigma).
class FrozenNoiseModel : public DecisionOracle {
 public:
  FrozenNoiseModel(LinearSoftmaxModel inner, std::uint64_t noise_seed, double sigma = 0.1);

  Shape shape() const override { return inner_.shape(); }
  int num_classes() const override { return inner_.num_classes(); }
  int predict(const Image& image) const override;

  const LinearSoftmaxModel& inner() const { return inner_; }
  const std::vector<double>& noise_mask() const { return mask_; }
  std::uint64_t noise_seed() const { return noise_seed_; }
  double sigma() const { return sigma_; }

 private:
  LinearSoftmaxModel inner_;
  std::uint64_t noise_seed_;
  double sigma_;
  std::vector<double> mask_;
};

struct TrainOptions {
  int epochs = 100;
  double learning_rate = 0.5;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

// Mini-batch gradient descent on the mean cross-entropy from W = b = 0,
// reshuffling every epoch from `seed`. Parameters are rounded to float32
// at the end so checkpoints reproduce the trained model exactly.
LinearSoftmaxModel train(const Dataset& dataset, const TrainOptions& options);

// As train(), but every step averages the clean-batch gradient with the
// gradient on x' = clip(x + epsilon * g / |g|), g the input gradient of
// the loss under the current parameters.
LinearSoftmaxModel adversarial_train(const Dataset& dataset, const TrainOptions& options,
                                     double epsilon);

// Exact minimal L2 distance to the decision boundary ignoring the [0,1]
// box; 0 when the sample is already misclassified.
double min_adversarial_distance_linear(const LinearSoftmaxModel& model, const Sample& sample);

// Checkpoint: text header terminated by "end\n", then raw AVT1-framed
// float32 blocks for W (K x D x 1) and b (1 x K x 1).
struct ModelCheckpoint {
  ModelKind kind = ModelKind::vanilla;
  LinearSoftmaxModel linear;
  std::uint64_t noise_seed = 0;
  double noise_sigma = 0.1;

  std::unique_ptr<DecisionOracle> make_oracle() const;
};

std::string serialize_checkpoint(const ModelCheckpoint& checkpoint);
ModelCheckpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, const ModelCheckpoint& checkpoint);
ModelCheckpoint load_checkpoint(const std::string& path);

}  // namespace arena
