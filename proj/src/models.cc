#include "arena/models.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "arena/rng.h"

namespace arena {

const char* to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::vanilla: return "vanilla";
    case ModelKind::frozen_noise: return "frozen-noise";
    case ModelKind::adv_trained: return "adv-trained";
  }
  return "vanilla";
}

ModelKind parse_model_kind(std::string_view text) {
  for (ModelKind k : {ModelKind::vanilla, ModelKind::frozen_noise, ModelKind::adv_trained}) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown model kind: " + std::string(text));
}

std::vector<double> softmax(std::span<const double> logits) {
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp(logits[k] - top);
    sum += p[k];
  }
  for (double& v : p) v /= sum;
  return p;
}

LinearSoftmaxModel::LinearSoftmaxModel(Shape shape, int num_classes)
    : LinearSoftmaxModel(shape, num_classes,
                         std::vector<double>(static_cast<std::size_t>(num_classes) * shape.size()),
                         std::vector<double>(static_cast<std::size_t>(num_classes))) {}

LinearSoftmaxModel::LinearSoftmaxModel(Shape shape, int num_classes, std::vector<double> weights,
                                       std::vector<double> bias)
    : shape_(shape),
      num_classes_(num_classes),
      weights_(std::move(weights)),
      bias_(std::move(bias)) {
  validate_shape(shape_);
  if (num_classes_ < 2) throw std::invalid_argument("model needs at least 2 classes");
  if (weights_.size() != static_cast<std::size_t>(num_classes_) * shape_.size() ||
      bias_.size() != static_cast<std::size_t>(num_classes_)) {
    throw std::invalid_argument("parameter sizes do not match K x D");
  }
}

std::span<const double> LinearSoftmaxModel::weight_row(int k) const {
  const std::size_t d = input_size();
  return std::span<const double>(weights_).subspan(static_cast<std::size_t>(k) * d, d);
}

std::vector<double> LinearSoftmaxModel::logits(std::span<const double> x) const {
  const std::size_t d = input_size();
  if (x.size() != d) throw std::invalid_argument("input size does not match model");
  std::vector<double> z(bias_);
  for (int k = 0; k < num_classes_; ++k) {
    const double* w = weights_.data() + static_cast<std::size_t>(k) * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += w[j] * x[j];
    z[static_cast<std::size_t>(k)] += acc;
  }
  return z;
}

int LinearSoftmaxModel::predict_flat(std::span<const double> x) const {
  const auto z = logits(x);
  // max_element returns the first maximum: ties go to the lowest index.
  return static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
}

int LinearSoftmaxModel::predict(const Image& image) const {
  if (image.shape() != shape_) throw ModelError("input shape does not match model");
  return predict_flat(image.to_double());
}

double LinearSoftmaxModel::loss(std::span<const double> x, int label) const {
  const auto p = softmax(logits(x));
  return -std::log(std::max(p[static_cast<std::size_t>(label)], 1e-12));
}

std::vector<double> LinearSoftmaxModel::loss_gradient(std::span<const double> x, int label) const {
  auto r = softmax(logits(x));
  r[static_cast<std::size_t>(label)] -= 1.0;
  const std::size_t d = input_size();
  std::vector<double> g(d, 0.0);
  for (int k = 0; k < num_classes_; ++k) {
    const double rk = r[static_cast<std::size_t>(k)];
    const double* w = weights_.data() + static_cast<std::size_t>(k) * d;
    for (std::size_t j = 0; j < d; ++j) g[j] += rk * w[j];
  }
  return g;
}

FrozenNoiseModel::FrozenNoiseModel(LinearSoftmaxModel inner, std::uint64_t noise_seed,
                                   double sigma)
    : inner_(std::move(inner)), noise_seed_(noise_seed), sigma_(sigma) {
  Rng rng = Rng(noise_seed_).split("frozen-noise");
  mask_.resize(inner_.input_size());
  for (double& v : mask_) v = sigma_ * rng.normal();
}

int FrozenNoiseModel::predict(const Image& image) const {
  if (image.shape() != shape()) throw ModelError("input shape does not match model");
  std::vector<double> x = image.to_double();
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = std::clamp(x[j] + mask_[j], 0.0, 1.0);
  return inner_.predict_flat(x);
}

class Trainer {
 public:
  Trainer(const Dataset& data, const TrainOptions& opts, std::optional<double> epsilon)
      : data_(data), opts_(opts), epsilon_(epsilon) {
    if (data.size() == 0) throw std::invalid_argument("cannot train on an empty dataset");
    if (data.split() != SplitTag::train) {
      throw std::invalid_argument("models train on the train split only");
    }
    if (opts.epochs < 0 || opts.batch_size < 1) throw std::invalid_argument("bad train options");
    if (epsilon && !(*epsilon >= 0.0)) throw std::invalid_argument("epsilon must be >= 0");
  }

  LinearSoftmaxModel run() {
    LinearSoftmaxModel model(data_.shape(), data_.num_classes());
    const std::size_t d = model.input_size();
    const std::size_t k_count = static_cast<std::size_t>(model.num_classes());
    std::vector<std::vector<double>> inputs;
    inputs.reserve(data_.size());
    for (const auto& s : data_.samples()) inputs.push_back(s.image.to_double());

    Rng rng = Rng(opts_.seed).split("train-shuffle");
    std::vector<std::size_t> order(data_.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    std::vector<double> grad_w(k_count * d), grad_b(k_count);
    std::vector<double> adv_w(k_count * d), adv_b(k_count);
    std::vector<double> perturbed(d);
    for (int epoch = 0; epoch < opts_.epochs; ++epoch) {
      rng.shuffle(order);
      for (std::size_t start = 0; start < order.size();
           start += static_cast<std::size_t>(opts_.batch_size)) {
        const std::size_t end =
            std::min(order.size(), start + static_cast<std::size_t>(opts_.batch_size));
        std::fill(grad_w.begin(), grad_w.end(), 0.0);
        std::fill(grad_b.begin(), grad_b.end(), 0.0);
        std::fill(adv_w.begin(), adv_w.end(), 0.0);
        std::fill(adv_b.begin(), adv_b.end(), 0.0);
        for (std::size_t i = start; i < end; ++i) {
          const auto& x = inputs[order[i]];
          const int label = data_[order[i]].true_label;
          accumulate(model, x, label, grad_w, grad_b);
          if (epsilon_) {
            const auto g = model.loss_gradient(x, label);
            double norm = 0.0;
            for (double v : g) norm += v * v;
            norm = std::sqrt(norm);
            for (std::size_t j = 0; j < d; ++j) {
              const double step = norm > 0.0 ? *epsilon_ * g[j] / norm : 0.0;
              perturbed[j] = std::clamp(x[j] + step, 0.0, 1.0);
            }
            accumulate(model, perturbed, label, adv_w, adv_b);
          }
        }
        const double scale = 1.0 / static_cast<double>(end - start);
        for (std::size_t j = 0; j < grad_w.size(); ++j) {
          double g = grad_w[j] * scale;
          if (epsilon_) g = 0.5 * (g + adv_w[j] * scale);
          model.weights_[j] -= opts_.learning_rate * g;
        }
        for (std::size_t k = 0; k < k_count; ++k) {
          double g = grad_b[k] * scale;
          if (epsilon_) g = 0.5 * (g + adv_b[k] * scale);
          model.bias_[k] -= opts_.learning_rate * g;
        }
      }
    }
    for (double& w : model.weights_) w = static_cast<float>(w);
    for (double& b : model.bias_) b = static_cast<float>(b);
    model.trained_ = true;
    return model;
  }

 private:
  // Adds the parameter gradient of one example's cross-entropy.
  static void accumulate(const LinearSoftmaxModel& model, std::span<const double> x, int label,
                         std::vector<double>& gw, std::vector<double>& gb) {
    auto r = softmax(model.logits(x));
    r[static_cast<std::size_t>(label)] -= 1.0;
    const std::size_t d = x.size();
    for (std::size_t k = 0; k < r.size(); ++k) {
      double* row = gw.data() + k * d;
      for (std::size_t j = 0; j < d; ++j) row[j] += r[k] * x[j];
      gb[k] += r[k];
    }
  }

  const Dataset& data_;
  TrainOptions opts_;
  std::optional<double> epsilon_;
};

LinearSoftmaxModel train(const Dataset& dataset, const TrainOptions& options) {
  return Trainer(dataset, options, std::nullopt).run();
}

LinearSoftmaxModel adversarial_train(const Dataset& dataset, const TrainOptions& options,
                                     double epsilon) {
  return Trainer(dataset, options, epsilon).run();
}

double min_adversarial_distance_linear(const LinearSoftmaxModel& model, const Sample& sample) {
  const auto x = sample.image.to_double();
  if (model.predict_flat(x) != sample.true_label) return 0.0;
  const auto z = model.logits(x);
  const int t = sample.true_label;
  const auto wt = model.weight_row(t);
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < model.num_classes(); ++k) {
    if (k == t) continue;
    const auto wk = model.weight_row(k);
    double norm2 = 0.0;
    for (std::size_t j = 0; j < wt.size(); ++j) norm2 += (wt[j] - wk[j]) * (wt[j] - wk[j]);
    if (norm2 == 0.0) continue;
    const double margin = z[static_cast<std::size_t>(t)] - z[static_cast<std::size_t>(k)];
    best = std::min(best, std::abs(margin) / std::sqrt(norm2));
  }
  if (!std::isfinite(best)) {
    throw std::invalid_argument("degenerate model: every class shares the true-class weights");
  }
  return best;
}

std::unique_ptr<DecisionOracle> ModelCheckpoint::make_oracle() const {
  if (kind == ModelKind::frozen_noise) {
    return std::make_unique<FrozenNoiseModel>(linear, noise_seed, noise_sigma);
  }
  return std::make_unique<LinearSoftmaxModel>(linear);
}

namespace {

constexpr std::string_view kCheckpointMagic = "AVMODEL1";

std::vector<float> to_float(const std::vector<double>& v) {
  return std::vector<float>(v.begin(), v.end());
}

}  // namespace

std::string serialize_checkpoint(const ModelCheckpoint& c) {
  const Shape s = c.linear.shape();
  const int k = c.linear.num_classes();
  std::ostringstream header;
  header << kCheckpointMagic << "\n"
         << "kind\t" << to_string(c.kind) << "\n"
         << "classes\t" << k << "\n"
         << "shape\t" << format_shape(s) << "\n";
  if (c.kind == ModelKind::frozen_noise) {
    char sigma[64];
    std::snprintf(sigma, sizeof(sigma), "%.17g", c.noise_sigma);
    header << "noise_seed\t" << c.noise_seed << "\n"
           << "noise_sigma\t" << sigma << "\n";
  }
  header << "end\n";
  std::string out = header.str();
  out += write_raw_tensor({static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(s.size()), 1},
                          to_float(c.linear.weights()));
  out += write_raw_tensor({1, static_cast<std::uint32_t>(k), 1}, to_float(c.linear.bias()));
  return out;
}

ModelCheckpoint parse_checkpoint(std::string_view bytes) {
  const std::string_view end_marker = "\nend\n";
  const auto end = bytes.find(end_marker);
  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic ||
      end == std::string_view::npos) {
    throw std::runtime_error("not a model checkpoint");
  }
  std::map<std::string, std::string> kv;
  std::istringstream header(std::string(bytes.substr(0, end)));
  std::string line;
  std::getline(header, line);
  while (std::getline(header, line)) {
    const auto tab = line.find('\t');
    if (tab != std::string::npos) kv[line.substr(0, tab)] = line.substr(tab + 1);
  }
  for (const char* key : {"kind", "classes", "shape"}) {
    if (!kv.count(key)) throw std::runtime_error(std::string("checkpoint lacks ") + key);
  }
  ModelCheckpoint c;
  c.kind = parse_model_kind(kv["kind"]);
  const int k = std::stoi(kv["classes"]);
  const Shape shape = parse_shape(kv["shape"]);
  if (c.kind == ModelKind::frozen_noise) {
    if (!kv.count("noise_seed") || !kv.count("noise_sigma")) {
      throw std::runtime_error("frozen-noise checkpoint lacks noise parameters");
    }
    c.noise_seed = std::stoull(kv["noise_seed"]);
    c.noise_sigma = std::stod(kv["noise_sigma"]);
  }
  std::string_view rest = bytes.substr(end + end_marker.size());
  std::size_t used = 0;
  RawTensor w = read_raw_tensor(rest, &used);
  rest = rest.substr(used);
  RawTensor b = read_raw_tensor(rest, &used);
  if (used != rest.size()) throw std::runtime_error("trailing bytes after checkpoint");
  if (w.shape != Shape{static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(shape.size()), 1} ||
      b.shape != Shape{1, static_cast<std::uint32_t>(k), 1}) {
    throw std::runtime_error("checkpoint parameter blocks do not match header");
  }
  c.linear = LinearSoftmaxModel(shape, k, std::vector<double>(w.values.begin(), w.values.end()),
                                std::vector<double>(b.values.begin(), b.values.end()));
  c.linear.set_trained(true);
  return c;
}

void save_checkpoint(const std::string& path, const ModelCheckpoint& checkpoint) {
  write_file(path, serialize_checkpoint(checkpoint));
}

ModelCheckpoint load_checkpoint(const std::string& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace arena
