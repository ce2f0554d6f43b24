#include "funmatch/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "funmatch/rng.hpp"

namespace funmatch {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

class BigEndianReader {
 public:
  BigEndianReader(const std::string& bytes, std::string source) : bytes_(bytes), source_(std::move(source)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes_[pos_++]);
    return v;
  }

  const std::uint8_t* take(std::size_t n) {
    need(n);
    const auto* p = reinterpret_cast<const std::uint8_t*>(bytes_.data() + pos_);
    pos_ += n;
    return p;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError(FormatErrorKind::truncated, "unexpected EOF in '" + source_ + "' at byte " + std::to_string(pos_));
    }
  }

  const std::string& bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

void write_u32_be(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.name = name;
  out.height = height;
  out.width = width;
  out.channels = channels;
  out.classes = classes;
  out.images.reserve(indices.size() * image_size());
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw ConfigError("subset index " + std::to_string(i) + " out of range");
    const auto img = image(i);
    out.images.insert(out.images.end(), img.begin(), img.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  if (begin > end || end > size()) {
    throw ConfigError("slice [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range");
  }
  Dataset out;
  out.name = name;
  out.height = height;
  out.width = width;
  out.channels = channels;
  out.classes = classes;
  out.images.assign(images.begin() + static_cast<std::ptrdiff_t>(begin * image_size()),
                    images.begin() + static_cast<std::ptrdiff_t>(end * image_size()));
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    labels.begin() + static_cast<std::ptrdiff_t>(end));
  return out;
}

void Dataset::validate() const {
  if (images.size() != labels.size() * image_size()) {
    throw ConfigError("dataset '" + name + "': " + std::to_string(images.size()) + " pixels for " +
                      std::to_string(labels.size()) + " labels of size " + std::to_string(image_size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw ConfigError("dataset '" + name + "': label " + std::to_string(labels[i]) + " at index " +
                        std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
}

Tensor<float> images_to_tensor(const Dataset& ds, std::span<const std::size_t> indices) {
  Tensor<float> out(Shape{indices.size(), ds.height, ds.width, ds.channels});
  const std::size_t stride = ds.image_size();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto img = ds.image(indices[b]);
    float* dst = out.data() + b * stride;
    for (std::size_t p = 0; p < stride; ++p) dst[p] = pixel_to_unit(img[p]);
  }
  return out;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 std::size_t classes, std::string name) {
  const std::string image_bytes = read_file(images_path);
  const std::string label_bytes = read_file(labels_path);
  BigEndianReader images(image_bytes, images_path.string());
  BigEndianReader labels(label_bytes, labels_path.string());

  if (const auto magic = images.u32(); magic != kIdxImageMagic) {
    throw FormatError(FormatErrorKind::bad_magic, "bad IDX image magic in '" + images_path.string() + "'");
  }
  if (const auto magic = labels.u32(); magic != kIdxLabelMagic) {
    throw FormatError(FormatErrorKind::bad_magic, "bad IDX label magic in '" + labels_path.string() + "'");
  }
  const std::size_t n = images.u32();
  Dataset ds;
  ds.name = std::move(name);
  ds.height = images.u32();
  ds.width = images.u32();
  ds.channels = 1;
  ds.classes = classes;
  if (ds.height == 0 || ds.width == 0) {
    throw FormatError(FormatErrorKind::malformed, "IDX image dimensions must be positive");
  }
  const std::size_t label_count = labels.u32();
  if (label_count != n) {
    throw FormatError(FormatErrorKind::malformed, "count mismatch: " + std::to_string(n) + " images vs " +
                                                      std::to_string(label_count) + " labels");
  }
  const std::uint8_t* pixels = images.take(n * ds.image_size());
  ds.images.assign(pixels, pixels + n * ds.image_size());
  const std::uint8_t* raw_labels = labels.take(n);
  ds.labels.assign(raw_labels, raw_labels + n);
  ds.validate();
  return ds;
}

void save_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  if (ds.channels != 1) throw ConfigError("IDX export supports single-channel datasets only");
  std::ofstream images(images_path, std::ios::binary | std::ios::trunc);
  std::ofstream labels(labels_path, std::ios::binary | std::ios::trunc);
  if (!images || !labels) throw IoError("cannot open IDX output files for writing");
  write_u32_be(images, kIdxImageMagic);
  write_u32_be(images, static_cast<std::uint32_t>(ds.size()));
  write_u32_be(images, static_cast<std::uint32_t>(ds.height));
  write_u32_be(images, static_cast<std::uint32_t>(ds.width));
  images.write(reinterpret_cast<const char*>(ds.images.data()), static_cast<std::streamsize>(ds.images.size()));
  write_u32_be(labels, kIdxLabelMagic);
  write_u32_be(labels, static_cast<std::uint32_t>(ds.size()));
  for (std::int32_t l : ds.labels) labels.put(static_cast<char>(l));
  if (!images || !labels) throw IoError("IDX write failed");
}

Dataset gen_synthetic(std::uint64_t seed, std::size_t n, std::size_t classes, std::size_t resolution,
                      const SyntheticOptions& options, std::string name) {
  if (classes < 2) throw ConfigError("synthetic dataset needs at least 2 classes");
  if (classes > 256) throw ConfigError("synthetic dataset supports at most 256 classes");
  if (resolution < 4) throw ConfigError("synthetic resolution must be at least 4");

  Dataset ds;
  ds.name = std::move(name);
  ds.height = resolution;
  ds.width = resolution;
  ds.channels = 1;
  ds.classes = classes;
  ds.labels.resize(n);
  ds.images.resize(n * resolution * resolution);

  Rng rng = make_rng(seed, Stream::synthetic, {n, classes, resolution});
  for (std::size_t i = 0; i < n; ++i) ds.labels[i] = static_cast<std::int32_t>(i % classes);
  std::shuffle(ds.labels.begin(), ds.labels.end(), rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const double res = static_cast<double>(resolution);
  std::vector<double> canvas(resolution * resolution);
  for (std::size_t i = 0; i < n; ++i) {
    const double base_angle = std::numbers::pi * static_cast<double>(ds.labels[i]) / static_cast<double>(classes);
    const double angle = base_angle + options.angle_jitter_deg * std::numbers::pi / 180.0 * gauss(rng);
    const double cx = res * (0.5 + 0.2 * (unit(rng) - 0.5));
    const double cy = res * (0.5 + 0.2 * (unit(rng) - 0.5));
    const double half_length = res * (0.275 + 0.15 * unit(rng));
    const double thickness = 1.2 + 1.0 * unit(rng);
    const double amplitude = 140.0 + 80.0 * unit(rng);
    const double background = 10.0 + 40.0 * unit(rng);
    const double dx = std::cos(angle), dy = std::sin(angle);

    std::fill(canvas.begin(), canvas.end(), background);
    for (std::size_t y = 0; y < resolution; ++y) {
      for (std::size_t x = 0; x < resolution; ++x) {
        const double px = static_cast<double>(x) + 0.5 - cx;
        const double py = static_cast<double>(y) + 0.5 - cy;
        const double along = px * dx + py * dy;
        const double across = -px * dy + py * dx;
        const double end_falloff = std::clamp(half_length + 0.5 - std::abs(along), 0.0, 1.0);
        const double profile = std::exp(-across * across / (2.0 * (thickness / 2.0) * (thickness / 2.0)));
        canvas[y * resolution + x] += amplitude * profile * end_falloff;
      }
    }
    for (int d = 0; d < options.distractors; ++d) {
      const double bx = res * unit(rng), by = res * unit(rng);
      const double radius = 1.5 + 1.5 * unit(rng);
      const double strength = 60.0 + 90.0 * unit(rng);
      for (std::size_t y = 0; y < resolution; ++y) {
        for (std::size_t x = 0; x < resolution; ++x) {
          const double ex = static_cast<double>(x) + 0.5 - bx, ey = static_cast<double>(y) + 0.5 - by;
          canvas[y * resolution + x] += strength * std::exp(-(ex * ex + ey * ey) / (2.0 * radius * radius));
        }
      }
    }
    std::uint8_t* dst = ds.images.data() + i * resolution * resolution;
    for (std::size_t p = 0; p < canvas.size(); ++p) {
      const double v = canvas[p] + options.noise_std * gauss(rng);
      dst[p] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
    }
  }
  return ds;
}

std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = make_rng(seed, Stream::shuffle, {epoch});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  return (n + batch_size - 1) / batch_size;
}

EpochBatches::EpochBatches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch)
    : ds_(&ds),
      batch_size_(batch_size),
      count_(batches_per_epoch(ds.size(), batch_size)),
      order_(epoch_permutation(ds.size(), seed, epoch)) {}

Batch EpochBatches::batch(std::size_t i) const {
  if (i >= count_) throw ConfigError("batch index " + std::to_string(i) + " out of range");
  const std::size_t begin = i * batch_size_;
  const std::size_t end = std::min(begin + batch_size_, order_.size());
  Batch b;
  b.indices.assign(order_.begin() + static_cast<std::ptrdiff_t>(begin), order_.begin() + static_cast<std::ptrdiff_t>(end));
  b.images = images_to_tensor(*ds_, b.indices);
  b.labels.reserve(b.indices.size());
  for (std::size_t idx : b.indices) b.labels.push_back(ds_->labels[idx]);
  return b;
}

}  // namespace funmatch
