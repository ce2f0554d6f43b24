#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "funmatch/tensor.hpp"

namespace funmatch {

/// In-memory image classification split. Images are u8 [n, h, w, c], row-major.
struct Dataset {
  std::string name;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::size_t classes = 0;
  std::vector<std::uint8_t> images;
  std::vector<std::int32_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_size() const noexcept { return height * width * channels; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(images).subspan(i * image_size(), image_size());
  }

  /// Copy of the examples at `indices`, in that order.
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Copy of the contiguous range [begin, end).
  Dataset slice(std::size_t begin, std::size_t end) const;

  /// Throws ConfigError when array sizes disagree or a label is outside [0, classes).
  void validate() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// Maps u8 pixels to [-1, 1] via x / 127.5 - 1.
inline float pixel_to_unit(std::uint8_t v) noexcept { return static_cast<float>(v) / 127.5f - 1.0f; }

/// Images as f32 [b, h, w, c] in [-1, 1].
Tensor<float> images_to_tensor(const Dataset& ds, std::span<const std::size_t> indices);

/// Reads an IDX image file (magic 0x00000803) and label file (magic 0x00000801).
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes = 10, std::string name = "train");

/// Writes a single-channel dataset as an IDX image/label pair.
void save_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

struct SyntheticOptions {
  /// Standard deviation of the per-example orientation jitter, in degrees.
  double angle_jitter_deg = 10.0;
  /// Standard deviation of additive pixel noise, in u8 units.
  double noise_std = 24.0;
  /// Number of blob distractors per image.
  int distractors = 2;
};

/// Procedural single-channel images: each class is a bright bar at a class
/// specific orientation, jittered in angle, position and length, over noisy
/// background with blob distractors. Labels are balanced within +-1 and the
/// order is shuffled. Deterministic in (seed, n, classes, resolution, options).
Dataset gen_synthetic(std::uint64_t seed, std::size_t n, std::size_t classes, std::size_t resolution,
                      const SyntheticOptions& options = {}, std::string name = "train");

struct Batch {
  Tensor<float> images;
  std::vector<std::int32_t> labels;
  /// Positions of the examples in the source dataset.
  std::vector<std::size_t> indices;
};

/// Permutation of [0, n) for one epoch, seeded by (seed, epoch).
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch);

/// The batches of one epoch: a seeded permutation cut into consecutive
/// chunks of batch_size; the last batch may be short.
class EpochBatches {
 public:
  EpochBatches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch);

  std::size_t count() const noexcept { return count_; }
  Batch batch(std::size_t i) const;
  const std::vector<std::size_t>& order() const noexcept { return order_; }

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::size_t count_;
  std::vector<std::size_t> order_;
};

inline EpochBatches batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch) {
  return EpochBatches(ds, batch_size, seed, epoch);
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size);

}  // namespace funmatch
