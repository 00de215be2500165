#include "arena/dataset.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "arena/rng.h"

namespace arena {

const char* to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::development: return "development";
    case SplitTag::validation: return "validation";
    case SplitTag::test_round: return "test-round";
    case SplitTag::test_final: return "test-final";
  }
  return "train";
}

SplitTag parse_split_tag(std::string_view text) {
  for (SplitTag t : {SplitTag::train, SplitTag::development, SplitTag::validation,
                     SplitTag::test_round, SplitTag::test_final}) {
    if (text == to_string(t)) return t;
  }
  throw std::invalid_argument("unknown split tag: " + std::string(text));
}

Dataset::Dataset(int num_classes, SplitTag split, std::vector<Sample> samples)
    : num_classes_(num_classes), split_(split), samples_(std::move(samples)) {
  if (num_classes_ < 2) throw std::invalid_argument("a dataset needs at least 2 classes");
  if (!samples_.empty()) shape_ = samples_.front().image.shape();
  std::set<std::string_view> ids;
  for (const auto& s : samples_) {
    if (!ids.insert(s.sample_id).second) {
      throw std::invalid_argument("duplicate sample id " + s.sample_id);
    }
    if (s.image.shape() != shape_) {
      throw std::invalid_argument("sample " + s.sample_id + " has a different image shape");
    }
    if (s.true_label < 0 || s.true_label >= num_classes_) {
      throw std::invalid_argument("sample " + s.sample_id + " label out of range");
    }
    if (s.target_label) {
      if (*s.target_label < 0 || *s.target_label >= num_classes_ ||
          *s.target_label == s.true_label) {
        throw std::invalid_argument("sample " + s.sample_id + " has an invalid target label");
      }
    }
  }
}

Dataset Dataset::prefix(std::size_t n) const {
  if (n >= samples_.size()) return *this;
  return Dataset(num_classes_, split_,
                 std::vector<Sample>(samples_.begin(), samples_.begin() + static_cast<long>(n)));
}

Dataset generate_synthetic_dataset(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("need at least 2 classes (K >= 2)");
  if (spec.per_class < 1) throw std::invalid_argument("need at least one sample per class");
  validate_shape(spec.shape);
  if (spec.shape.size() < 4) throw std::invalid_argument("image must have at least 4 pixels");

  const Shape shape = spec.shape;
  const std::size_t d = shape.size();
  const int k_count = spec.num_classes;
  Rng root(spec.seed);

  // Prototype: mean intensity spread over [0.15, 0.85] plus the sum of three
  // seeded plane waves with at most 2 cycles across the image.
  std::vector<std::vector<double>> prototypes(static_cast<std::size_t>(k_count));
  Rng proto_rng = root.split("prototypes");
  for (int k = 0; k < k_count; ++k) {
    Rng r = proto_rng.split(static_cast<std::uint64_t>(k));
    const double mean = 0.15 + 0.7 * k / (k_count - 1);
    auto& proto = prototypes[static_cast<std::size_t>(k)];
    proto.assign(d, mean);
    for (std::uint32_t c = 0; c < shape.channels; ++c) {
      for (int wave = 0; wave < 3; ++wave) {
        const double fy = static_cast<double>(r.uniform_int(3));
        const double fx = static_cast<double>(r.uniform_int(3));
        const double phase = 2.0 * std::numbers::pi * r.uniform();
        for (std::uint32_t y = 0; y < shape.height; ++y) {
          for (std::uint32_t x = 0; x < shape.width; ++x) {
            const double arg = 2.0 * std::numbers::pi *
                                   (fy * y / shape.height + fx * x / shape.width) +
                               phase;
            proto[(static_cast<std::size_t>(y) * shape.width + x) * shape.channels + c] +=
                kTemplateAmplitude * std::cos(arg) / std::sqrt(3.0);
          }
        }
      }
    }
  }

  const std::string prefix = spec.id_prefix.empty() ? to_string(spec.split) : spec.id_prefix;
  Rng noise_rng = root.split("samples").split(prefix);
  std::vector<Sample> samples;
  const int total = k_count * spec.per_class;
  samples.reserve(static_cast<std::size_t>(total));
  std::vector<double> buf(d);
  char id[96];
  for (int i = 0; i < total; ++i) {
    const int label = i % k_count;
    Rng r = noise_rng.split(static_cast<std::uint64_t>(i));
    const auto& proto = prototypes[static_cast<std::size_t>(label)];
    for (std::size_t j = 0; j < d; ++j) buf[j] = proto[j] + kSyntheticNoiseStddev * r.normal();
    std::snprintf(id, sizeof(id), "%s-%06d", prefix.c_str(), i);
    samples.push_back(Sample{Image::clipped(shape, buf), label, std::nullopt, id});
  }
  return Dataset(k_count, spec.split, std::move(samples));
}

void save_dataset(const Dataset& dataset, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream meta(fs::path(dir) / "meta");
    meta << "K\t" << dataset.num_classes() << "\n"
         << "shape\t" << format_shape(dataset.shape()) << "\n"
         << "split_tag\t" << to_string(dataset.split()) << "\n"
         << "count\t" << dataset.size() << "\n";
    if (!meta) throw std::runtime_error("cannot write dataset meta in " + dir);
  }
  std::ofstream labels(fs::path(dir) / "labels");
  for (const auto& s : dataset.samples()) {
    save_image((fs::path(dir) / (s.sample_id + ".avt1")).string(), s.image);
    labels << s.sample_id << '\t' << s.true_label << '\t'
           << (s.target_label ? *s.target_label : -1) << '\n';
  }
  if (!labels) throw std::runtime_error("cannot write dataset labels in " + dir);
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream meta(fs::path(dir) / "meta");
  if (!meta) throw std::runtime_error("no dataset meta in " + dir);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    auto tab = line.find('\t');
    if (tab == std::string::npos) continue;
    kv[line.substr(0, tab)] = line.substr(tab + 1);
  }
  for (const char* key : {"K", "shape", "split_tag", "count"}) {
    if (!kv.count(key)) throw std::runtime_error(std::string("dataset meta lacks ") + key);
  }
  const int k = std::stoi(kv["K"]);
  const Shape shape = parse_shape(kv["shape"]);
  const SplitTag split = parse_split_tag(kv["split_tag"]);
  const std::size_t count = std::stoul(kv["count"]);

  std::ifstream labels(fs::path(dir) / "labels");
  if (!labels) throw std::runtime_error("no dataset labels in " + dir);
  std::vector<Sample> samples;
  while (std::getline(labels, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Sample s;
    int target = -1;
    if (!std::getline(ls, s.sample_id, '\t') || !(ls >> s.true_label >> target)) {
      throw std::runtime_error("malformed labels line: " + line);
    }
    if (target >= 0) s.target_label = target;
    s.image = load_image((fs::path(dir) / (s.sample_id + ".avt1")).string());
    if (s.image.shape() != shape) {
      throw std::runtime_error("sample " + s.sample_id + " does not match meta shape");
    }
    samples.push_back(std::move(s));
  }
  if (samples.size() != count) {
    throw std::runtime_error("dataset meta count " + std::to_string(count) + " but " +
                             std::to_string(samples.size()) + " labels");
  }
  return Dataset(k, split, std::move(samples));
}

}  // namespace arena
