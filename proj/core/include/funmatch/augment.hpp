#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "funmatch/rng.hpp"
#include "funmatch/tensor.hpp"

namespace funmatch {

/// How teacher and student inputs relate at each distillation step.
enum class ConsistencyMode {
  /// Teacher sees a fixed central crop; only the student view is augmented.
  fixed_teacher,
  /// Teacher and student each get their own random crop and flip.
  independent,
  /// One crop and flip shared by both roles.
  consistent,
  /// consistent plus one image-space mixup shared by both roles.
  function_matching,
};

std::string_view to_string(ConsistencyMode mode);
ConsistencyMode parse_consistency_mode(std::string_view text);

struct AugmentConfig {
  double area_min = 0.05;
  double area_max = 1.0;
  double aspect_min = 3.0 / 4.0;
  double aspect_max = 4.0 / 3.0;
  double flip_prob = 0.5;
  /// Beta(alpha, alpha) concentration for mixup; 1 gives a uniform lambda.
  double mixup_alpha = 1.0;
  std::size_t teacher_resolution = 28;
  std::size_t student_resolution = 28;
  /// Area fraction of the deterministic central crop used for evaluation and the fixed teacher.
  double central_crop_area = 0.875;

  void validate() const;
};

/// Crop window in source pixels plus horizontal flip.
struct CropParams {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  bool flip = false;

  friend bool operator==(const CropParams&, const CropParams&) = default;
};

/// Inception-style crop: area fraction uniform in [area_min, area_max], log-uniform
/// aspect ratio, up to 10 attempts, then a central crop clamped to the aspect range.
CropParams sample_crop(std::size_t height, std::size_t width, const AugmentConfig& cfg, Rng& rng);

/// Square-ish central crop covering `area_fraction` of the image.
CropParams central_crop(std::size_t height, std::size_t width, double area_fraction);

/// Bilinear resize (half-pixel centres) of the crop window of one HWC image into
/// `out` of size out_res*out_res*channels. Values are clamped to [-1, 1].
void crop_resize(const float* image, std::size_t height, std::size_t width, std::size_t channels,
                 const CropParams& crop, std::size_t out_res, float* out);

/// Applies `crops[i]` to example i of an NHWC batch.
Tensor<float> crop_batch(const Tensor<float>& batch, const std::vector<CropParams>& crops, std::size_t out_res);

/// Bilinear resize of every image in an NHWC batch to out_res x out_res.
Tensor<float> resize_batch(const Tensor<float>& batch, std::size_t out_res);

struct CroppedImage {
  CropParams params;
  Tensor<float> image;
};

/// Samples a crop for one [h, w, c] image and returns it resized to out_res.
CroppedImage random_resized_crop(const Tensor<float>& image, const AugmentConfig& cfg, std::size_t out_res, Rng& rng);

struct MixupDraw {
  std::vector<float> lambda;
  std::vector<std::size_t> partner;
};

/// lambda ~ Beta(alpha, alpha) per example and a uniformly random partner permutation.
MixupDraw draw_mixup(std::size_t batch_size, double alpha, Rng& rng);

/// mixed[i] = lambda[i] * x[i] + (1 - lambda[i]) * x[partner[i]], clamped to [-1, 1].
Tensor<float> apply_mixup(const Tensor<float>& batch, const MixupDraw& draw);

struct MixupResult {
  Tensor<float> images;
  MixupDraw draw;
};

MixupResult mixup(const Tensor<float>& batch, double alpha, Rng& rng);

struct ViewPair {
  Tensor<float> teacher;
  Tensor<float> student;
  std::vector<float> lambda;
  std::vector<std::size_t> partner;
  std::vector<CropParams> teacher_crops;
  std::vector<CropParams> student_crops;
};

/// Teacher and student inputs for one batch under `mode`.
ViewPair make_views(const Tensor<float>& batch, ConsistencyMode mode, const AugmentConfig& cfg, Rng& rng);

}  // namespace funmatch
