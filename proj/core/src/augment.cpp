#include "funmatch/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "funmatch/error.hpp"

namespace funmatch {

namespace {

constexpr int kCropAttempts = 10;

std::size_t round_to_size(double v) {
  return static_cast<std::size_t>(std::max(0.0, std::round(v)));
}

void check_batch(const Tensor<float>& batch, const char* where) {
  if (batch.rank() != 4) throw ShapeError(std::string(where) + ": expected [b,h,w,c], got " + to_string(batch.shape()));
}

}  // namespace

std::string_view to_string(ConsistencyMode mode) {
  switch (mode) {
    case ConsistencyMode::fixed_teacher: return "fixed_teacher";
    case ConsistencyMode::independent: return "independent";
    case ConsistencyMode::consistent: return "consistent";
    case ConsistencyMode::function_matching: return "function_matching";
  }
  return "unknown";
}

ConsistencyMode parse_consistency_mode(std::string_view text) {
  for (auto mode : {ConsistencyMode::fixed_teacher, ConsistencyMode::independent, ConsistencyMode::consistent,
                    ConsistencyMode::function_matching}) {
    if (text == to_string(mode)) return mode;
  }
  throw ConfigError("unknown consistency mode '" + std::string(text) + "'");
}

void AugmentConfig::validate() const {
  if (!(area_min > 0.0 && area_min <= area_max && area_max <= 1.0)) {
    throw ConfigError("augment: need 0 < area_min <= area_max <= 1");
  }
  if (!(aspect_min > 0.0 && aspect_min <= aspect_max)) throw ConfigError("augment: need 0 < aspect_min <= aspect_max");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ConfigError("augment: flip_prob must be in [0, 1]");
  if (!(mixup_alpha > 0.0)) throw ConfigError("augment: mixup_alpha must be positive");
  if (teacher_resolution == 0 || student_resolution == 0) throw ConfigError("augment: resolutions must be positive");
  if (teacher_resolution < student_resolution) {
    throw ConfigError("augment: teacher_resolution must be >= student_resolution");
  }
  if (!(central_crop_area > 0.0 && central_crop_area <= 1.0)) {
    throw ConfigError("augment: central_crop_area must be in (0, 1]");
  }
}

CropParams sample_crop(std::size_t height, std::size_t width, const AugmentConfig& cfg, Rng& rng) {
  if (height == 0 || width == 0) throw ShapeError("sample_crop: empty image");
  const double area = static_cast<double>(height * width);
  std::uniform_real_distribution<double> area_dist(cfg.area_min, cfg.area_max);
  std::uniform_real_distribution<double> log_ratio_dist(std::log(cfg.aspect_min), std::log(cfg.aspect_max));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  CropParams crop;
  bool found = false;
  for (int attempt = 0; attempt < kCropAttempts && !found; ++attempt) {
    const double target = area * area_dist(rng);
    const double ratio = std::exp(log_ratio_dist(rng));
    const std::size_t w = round_to_size(std::sqrt(target * ratio));
    const std::size_t h = round_to_size(std::sqrt(target / ratio));
    if (w > 0 && h > 0 && w <= width && h <= height) {
      crop.width = w;
      crop.height = h;
      crop.x = std::uniform_int_distribution<std::size_t>(0, width - w)(rng);
      crop.y = std::uniform_int_distribution<std::size_t>(0, height - h)(rng);
      found = true;
    }
  }
  if (!found) {
    const double in_ratio = static_cast<double>(width) / static_cast<double>(height);
    if (in_ratio < cfg.aspect_min) {
      crop.width = width;
      crop.height = std::clamp<std::size_t>(round_to_size(static_cast<double>(width) / cfg.aspect_min), 1, height);
    } else if (in_ratio > cfg.aspect_max) {
      crop.height = height;
      crop.width = std::clamp<std::size_t>(round_to_size(static_cast<double>(height) * cfg.aspect_max), 1, width);
    } else {
      crop.width = width;
      crop.height = height;
    }
    crop.x = (width - crop.width) / 2;
    crop.y = (height - crop.height) / 2;
  }
  crop.flip = unit(rng) < cfg.flip_prob;
  return crop;
}

CropParams central_crop(std::size_t height, std::size_t width, double area_fraction) {
  const double side = std::sqrt(area_fraction);
  CropParams crop;
  crop.width = std::clamp<std::size_t>(round_to_size(side * static_cast<double>(width)), 1, width);
  crop.height = std::clamp<std::size_t>(round_to_size(side * static_cast<double>(height)), 1, height);
  crop.x = (width - crop.width) / 2;
  crop.y = (height - crop.height) / 2;
  return crop;
}

void crop_resize(const float* image, std::size_t height, std::size_t width, std::size_t channels,
                 const CropParams& crop, std::size_t out_res, float* out) {
  if (crop.width == 0 || crop.height == 0 || crop.x + crop.width > width || crop.y + crop.height > height) {
    throw ShapeError("crop_resize: crop window outside the image");
  }
  const double scale_y = static_cast<double>(crop.height) / static_cast<double>(out_res);
  const double scale_x = static_cast<double>(crop.width) / static_cast<double>(out_res);
  const double max_y = static_cast<double>(crop.height - 1);
  const double max_x = static_cast<double>(crop.width - 1);
  for (std::size_t oy = 0; oy < out_res; ++oy) {
    const double sy = std::clamp((static_cast<double>(oy) + 0.5) * scale_y - 0.5, 0.0, max_y);
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, crop.height - 1);
    const float fy = static_cast<float>(sy - static_cast<double>(y0));
    for (std::size_t ox = 0; ox < out_res; ++ox) {
      const std::size_t src_ox = crop.flip ? out_res - 1 - ox : ox;
      const double sx = std::clamp((static_cast<double>(src_ox) + 0.5) * scale_x - 0.5, 0.0, max_x);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, crop.width - 1);
      const float fx = static_cast<float>(sx - static_cast<double>(x0));
      const float* p00 = image + ((crop.y + y0) * width + crop.x + x0) * channels;
      const float* p01 = image + ((crop.y + y0) * width + crop.x + x1) * channels;
      const float* p10 = image + ((crop.y + y1) * width + crop.x + x0) * channels;
      const float* p11 = image + ((crop.y + y1) * width + crop.x + x1) * channels;
      float* dst = out + (oy * out_res + ox) * channels;
      for (std::size_t c = 0; c < channels; ++c) {
        const float top = p00[c] + fx * (p01[c] - p00[c]);
        const float bottom = p10[c] + fx * (p11[c] - p10[c]);
        dst[c] = std::clamp(top + fy * (bottom - top), -1.0f, 1.0f);
      }
    }
  }
}

Tensor<float> crop_batch(const Tensor<float>& batch, const std::vector<CropParams>& crops, std::size_t out_res) {
  check_batch(batch, "crop_batch");
  const std::size_t b = batch.dim(0), h = batch.dim(1), w = batch.dim(2), c = batch.dim(3);
  if (crops.size() != b) throw ShapeError("crop_batch: one crop per example required");
  Tensor<float> out(Shape{b, out_res, out_res, c});
  for (std::size_t i = 0; i < b; ++i) {
    crop_resize(batch.data() + i * h * w * c, h, w, c, crops[i], out_res, out.data() + i * out_res * out_res * c);
  }
  return out;
}

Tensor<float> resize_batch(const Tensor<float>& batch, std::size_t out_res) {
  check_batch(batch, "resize_batch");
  const CropParams full{0, 0, batch.dim(2), batch.dim(1), false};
  return crop_batch(batch, std::vector<CropParams>(batch.dim(0), full), out_res);
}

CroppedImage random_resized_crop(const Tensor<float>& image, const AugmentConfig& cfg, std::size_t out_res, Rng& rng) {
  if (image.rank() != 3) throw ShapeError("random_resized_crop: expected [h,w,c], got " + to_string(image.shape()));
  CroppedImage result;
  result.params = sample_crop(image.dim(0), image.dim(1), cfg, rng);
  result.image = Tensor<float>(Shape{out_res, out_res, image.dim(2)});
  crop_resize(image.data(), image.dim(0), image.dim(1), image.dim(2), result.params, out_res, result.image.data());
  return result;
}

MixupDraw draw_mixup(std::size_t batch_size, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ConfigError("mixup: alpha must be positive");
  MixupDraw draw;
  draw.lambda.resize(batch_size);
  std::gamma_distribution<double> gamma(alpha, 1.0);
  for (float& l : draw.lambda) {
    const double a = gamma(rng);
    const double b = gamma(rng);
    l = a + b > 0.0 ? static_cast<float>(a / (a + b)) : 0.5f;
  }
  draw.partner.resize(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) draw.partner[i] = i;
  std::shuffle(draw.partner.begin(), draw.partner.end(), rng);
  return draw;
}

Tensor<float> apply_mixup(const Tensor<float>& batch, const MixupDraw& draw) {
  check_batch(batch, "apply_mixup");
  const std::size_t b = batch.dim(0);
  if (draw.lambda.size() != b || draw.partner.size() != b) throw ShapeError("apply_mixup: draw does not match batch");
  const std::size_t stride = batch.size() / std::max<std::size_t>(b, 1);
  Tensor<float> out(batch.shape());
  for (std::size_t i = 0; i < b; ++i) {
    const float lambda = draw.lambda[i];
    const std::size_t j = draw.partner.at(i);
    if (j >= b) throw ShapeError("apply_mixup: partner index out of range");
    const float* x = batch.data() + i * stride;
    const float* y = batch.data() + j * stride;
    float* dst = out.data() + i * stride;
    if (lambda == 1.0f || j == i) {
      std::copy(x, x + stride, dst);
      continue;
    }
    for (std::size_t p = 0; p < stride; ++p) {
      dst[p] = std::clamp(lambda * x[p] + (1.0f - lambda) * y[p], -1.0f, 1.0f);
    }
  }
  return out;
}

MixupResult mixup(const Tensor<float>& batch, double alpha, Rng& rng) {
  check_batch(batch, "mixup");
  MixupResult result;
  result.draw = draw_mixup(batch.dim(0), alpha, rng);
  result.images = apply_mixup(batch, result.draw);
  return result;
}

ViewPair make_views(const Tensor<float>& batch, ConsistencyMode mode, const AugmentConfig& cfg, Rng& rng) {
  check_batch(batch, "make_views");
  cfg.validate();
  const std::size_t b = batch.dim(0), h = batch.dim(1), w = batch.dim(2);
  ViewPair views;
  views.lambda.assign(b, 1.0f);
  views.partner.resize(b);
  for (std::size_t i = 0; i < b; ++i) views.partner[i] = i;

  const auto sample_all = [&]() {
    std::vector<CropParams> crops(b);
    for (auto& c : crops) c = sample_crop(h, w, cfg, rng);
    return crops;
  };

  switch (mode) {
    case ConsistencyMode::fixed_teacher:
      views.teacher_crops.assign(b, central_crop(h, w, cfg.central_crop_area));
      views.student_crops = sample_all();
      views.teacher = crop_batch(batch, views.teacher_crops, cfg.teacher_resolution);
      views.student = crop_batch(batch, views.student_crops, cfg.student_resolution);
      break;
    case ConsistencyMode::independent:
      views.teacher_crops = sample_all();
      views.student_crops = sample_all();
      views.teacher = crop_batch(batch, views.teacher_crops, cfg.teacher_resolution);
      views.student = crop_batch(batch, views.student_crops, cfg.student_resolution);
      break;
    case ConsistencyMode::consistent:
    case ConsistencyMode::function_matching:
      views.teacher_crops = sample_all();
      views.student_crops = views.teacher_crops;
      views.teacher = crop_batch(batch, views.teacher_crops, cfg.teacher_resolution);
      views.student = cfg.student_resolution == cfg.teacher_resolution
                          ? views.teacher
                          : resize_batch(views.teacher, cfg.student_resolution);
      if (mode == ConsistencyMode::function_matching) {
        const MixupDraw draw = draw_mixup(b, cfg.mixup_alpha, rng);
        views.teacher = apply_mixup(views.teacher, draw);
        views.student = apply_mixup(views.student, draw);
        views.lambda = draw.lambda;
        views.partner = draw.partner;
      }
      break;
    default:
      throw ConfigError("make_views: unknown consistency mode");
  }
  return views;
}

}  // namespace funmatch
