#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "arena/tensor.h"

namespace arena {

enum class SplitTag { train, development, validation, test_round, test_final };

const char* to_string(SplitTag tag);
SplitTag parse_split_tag(std::string_view text);

struct Sample {
  Image image;
  int true_label = 0;
  std::optional<int> target_label;
  std::string sample_id;
};

class Dataset {
 public:
  Dataset() = default;
  // Validates the shared-shape, label-range and target invariants.
  Dataset(int num_classes, SplitTag split, std::vector<Sample> samples);

  int num_classes() const { return num_classes_; }
  SplitTag split() const { return split_; }
  const Shape& shape() const { return shape_; }
  const std::vector<Sample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  const Sample& operator[](std::size_t i) const { return samples_[i]; }

  // The first n samples (all of them when n >= size()).
  Dataset prefix(std::size_t n) const;

 private:
  int num_classes_ = 0;
  SplitTag split_ = SplitTag::train;
  Shape shape_;
  std::vector<Sample> samples_;
};

// Class k is drawn from a fixed prototype (mean intensity plus a seeded
// low-frequency template) with N(0, 0.1^2) pixel noise, clipped to [0,1].
// Prototypes depend only on (seed, K, shape); the split tag selects an
// independent noise stream, so every split of one seed shares its class
// structure. Samples are class-interleaved: sample i has label i mod K.
struct SyntheticSpec {
  std::uint64_t seed = 0;
  int num_classes = 10;
  int per_class = 20;
  Shape shape{8, 8, 1};
  SplitTag split = SplitTag::train;
  // Sample ids are "<prefix>-NNNNNN"; the prefix also selects the noise
  // stream. Empty means the split name.
  std::string id_prefix;
};

inline constexpr double kSyntheticNoiseStddev = 0.1;
inline constexpr double kTemplateAmplitude = 0.3;

Dataset generate_synthetic_dataset(const SyntheticSpec& spec);

// Directory layout: `meta`, `labels`, and `<sample_id>.avt1` per sample.
void save_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace arena
