#include "thinner/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include "thinner/error.hpp"
#include "thinner/random.hpp"

namespace thinner {

void Dataset::validate() const {
  if (images.rank() != 4) {
    throw ValueError("dataset images must be [n x c x h x w], got " +
                     shape_to_string(images.shape()));
  }
  if (images.dim(0) != labels.size()) {
    throw ValueError("dataset has " + std::to_string(images.dim(0)) + " images but " +
                     std::to_string(labels.size()) + " labels");
  }
  if (classes <= 0) throw ValueError("dataset class count must be positive");
  for (int label : labels) {
    if (label < 0 || label >= classes) {
      throw ValueError("label " + std::to_string(label) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
  for (double p : images.data()) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValueError("pixel value outside [0, 1]");
  }
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
  auto [images, labels] = gather(data, indices);
  return Dataset{std::move(images), std::move(labels), data.classes};
}

std::pair<Tensor, std::vector<int>> gather(const Dataset& data,
                                           std::span<const std::size_t> indices) {
  if (indices.empty()) throw ValueError("cannot gather an empty batch");
  const Shape sample = data.sample_shape();
  const std::size_t stride = shape_size(sample);
  Tensor images({indices.size(), sample[0], sample[1], sample[2]});
  std::vector<int> labels;
  labels.reserve(indices.size());
  const auto src = data.images.data();
  auto dst = images.data();
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t i = indices[k];
    if (i >= data.size()) throw ValueError("sample index out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(i * stride), stride,
                dst.begin() + static_cast<std::ptrdiff_t>(k * stride));
    labels.push_back(data.labels[i]);
  }
  return {std::move(images), std::move(labels)};
}

namespace {

constexpr std::uint32_t kImageMagic3 = 0x00000803;
constexpr std::uint32_t kImageMagic4 = 0x00000804;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class BigEndianReader {
 public:
  BigEndianReader(const std::vector<unsigned char>& bytes, std::string what)
      : bytes_(bytes), what_(std::move(what)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_++];
    return v;
  }

  std::span<const unsigned char> take(std::size_t n) {
    need(n);
    std::span<const unsigned char> out(bytes_.data() + pos_, n);
    pos_ += n;
    return out;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw FormatError(what_ + ": truncated IDX file");
  }

  const std::vector<unsigned char>& bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

void put_u32(std::ofstream& out, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                         static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes, 4);
}

}  // namespace

Dataset load_idx_images(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  const auto image_bytes = read_file(images_path);
  const auto label_bytes = read_file(labels_path);

  BigEndianReader images(image_bytes, images_path.string());
  const std::uint32_t image_magic = images.u32();
  if (image_magic != kImageMagic3 && image_magic != kImageMagic4) {
    throw FormatError(images_path.string() + ": bad image magic");
  }
  const std::uint32_t n = images.u32();
  std::size_t channels = 1;
  if (image_magic == kImageMagic4) channels = images.u32();
  const std::uint32_t rows = images.u32();
  const std::uint32_t cols = images.u32();
  if (n == 0 || channels == 0 || rows == 0 || cols == 0) {
    throw FormatError(images_path.string() + ": zero-sized IDX dimension");
  }
  const auto pixels = images.take(std::size_t{n} * channels * rows * cols);

  BigEndianReader labels(label_bytes, labels_path.string());
  if (labels.u32() != kLabelMagic) throw FormatError(labels_path.string() + ": bad label magic");
  const std::uint32_t label_count = labels.u32();
  if (label_count != n) {
    throw FormatError("image count " + std::to_string(n) + " does not match label count " +
                      std::to_string(label_count));
  }
  const auto raw_labels = labels.take(label_count);

  Dataset data{Tensor({n, channels, rows, cols}), {}, 0};
  auto dst = data.images.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) dst[i] = pixels[i] / 255.0;
  data.labels.assign(raw_labels.begin(), raw_labels.end());
  data.classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
  return data;
}

void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
  data.validate();
  std::ofstream images(images_path, std::ios::binary);
  if (!images) throw IoError("cannot write " + images_path.string());
  const Shape shape = data.images.shape();
  const bool single_channel = shape[1] == 1;
  put_u32(images, single_channel ? kImageMagic3 : kImageMagic4);
  put_u32(images, static_cast<std::uint32_t>(shape[0]));
  if (!single_channel) put_u32(images, static_cast<std::uint32_t>(shape[1]));
  put_u32(images, static_cast<std::uint32_t>(shape[2]));
  put_u32(images, static_cast<std::uint32_t>(shape[3]));
  std::vector<char> pixels(data.images.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<char>(static_cast<unsigned char>(std::lround(data.images[i] * 255.0)));
  }
  images.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
  if (!images) throw IoError("failed writing " + images_path.string());

  std::ofstream labels(labels_path, std::ios::binary);
  if (!labels) throw IoError("cannot write " + labels_path.string());
  put_u32(labels, kLabelMagic);
  put_u32(labels, static_cast<std::uint32_t>(data.size()));
  for (int label : data.labels) {
    if (label > 255) throw ValueError("IDX labels must fit in one byte");
    labels.put(static_cast<char>(label));
  }
  if (!labels) throw IoError("failed writing " + labels_path.string());
}

namespace {

void render_bars(double* canvas, std::size_t h, std::size_t w, bool horizontal, Rng& rng) {
  const std::size_t extent = horizontal ? h : w;
  const std::size_t count = 1 + rng.below(2);
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t line = rng.below(extent);
    const double intensity = rng.uniform(0.7, 1.0);
    if (horizontal) {
      for (std::size_t x = 0; x < w; ++x) canvas[line * w + x] = intensity;
    } else {
      for (std::size_t y = 0; y < h; ++y) canvas[y * w + line] = intensity;
    }
  }
}

void render_blob(double* canvas, std::size_t h, std::size_t w, int label, int classes,
                 Rng& rng) {
  const double side = static_cast<double>(std::min(h, w));
  const double angle = 2.0 * 3.14159265358979323846 * label / classes;
  const double cy = 0.5 * (h - 1) + 0.3 * side * std::sin(angle) + rng.uniform(-1.0, 1.0);
  const double cx = 0.5 * (w - 1) + 0.3 * side * std::cos(angle) + rng.uniform(-1.0, 1.0);
  const double sigma = 0.15 * side;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      canvas[y * w + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  }
}

}  // namespace

Dataset generate_synthetic(const SyntheticTask& task, std::size_t n, std::uint64_t seed) {
  if (task.classes <= 0) throw ValueError("synthetic task needs a positive class count");
  if (n < static_cast<std::size_t>(task.classes)) {
    throw ValueError("synthetic dataset needs at least one sample per class");
  }
  if (task.channels == 0 || task.height == 0 || task.width == 0) {
    throw ValueError("synthetic canvas dimensions must be positive");
  }
  const bool bars = task.name == "bars";
  if (!bars && task.name != "blobs") throw ValueError("unknown synthetic task: " + task.name);
  if (bars && task.classes != 2) throw ValueError("the bars task has exactly 2 classes");

  Rng rng(seed);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % task.classes);
  rng.shuffle(std::span<int>(labels));

  const std::size_t h = task.height, w = task.width, area = h * w;
  Dataset data{Tensor({n, task.channels, h, w}), labels, task.classes};
  std::vector<double> canvas(area);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(canvas.begin(), canvas.end(), 0.0);
    if (bars) {
      render_bars(canvas.data(), h, w, labels[i] == 0, rng);
    } else {
      render_blob(canvas.data(), h, w, labels[i], task.classes, rng);
    }
    for (std::size_t c = 0; c < task.channels; ++c) {
      double* dst = data.images.data().data() + (i * task.channels + c) * area;
      for (std::size_t p = 0; p < area; ++p) {
        dst[p] = std::clamp(canvas[p] + task.noise * rng.uniform(), 0.0, 1.0);
      }
    }
  }
  return data;
}

std::pair<Dataset, Dataset> split(const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValueError("split fraction must be in (0, 1)");
  const auto first = static_cast<std::size_t>(std::floor(data.size() * fraction));
  if (first == 0 || first == data.size()) {
    throw ValueError("split of " + std::to_string(data.size()) +
                     " samples leaves one side empty");
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  const std::span<const std::size_t> all(order);
  return {subset(data, all.first(first)), subset(data, all.subspan(first))};
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size,
                                              std::uint64_t seed) {
  if (batch_size == 0) throw ValueError("batch size must be positive");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

}  // namespace thinner
