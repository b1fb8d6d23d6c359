#include "thinner/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "thinner/error.hpp"

namespace thinner {

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

void check_dims(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor dimension must be positive: " + shape_to_string(shape));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  check_dims(shape_);
  data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_dims(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_to_string(shape_));
  }
}

Tensor Tensor::filled(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_to_string(a.shape()) +
                     " and " + shape_to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  // i-k-j order keeps the inner loop contiguous; summation order over k is fixed.
  for (std::size_t i = 0; i < m; ++i) {
    double* row = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

Tensor reshape(const Tensor& a, Shape shape) {
  check_dims(shape);
  if (shape_size(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(a.shape()) + " as " +
                     shape_to_string(shape));
  }
  return Tensor(std::move(shape), a.values());
}

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding) {
  if (stride == 0) throw ValueError("convolution stride must be positive");
  if (kernel == 0 || kernel > in + 2 * padding) {
    throw ShapeError("kernel extent " + std::to_string(kernel) + " larger than padded input " +
                     std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

Tensor im2col(const Tensor& input, const ConvGeometry& geom) {
  require_rank(input, 3, "im2col");
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t oh = conv_output_extent(h, geom.kernel_h, geom.stride, geom.padding);
  const std::size_t ow = conv_output_extent(w, geom.kernel_w, geom.stride, geom.padding);
  const std::size_t kh = geom.kernel_h, kw = geom.kernel_w;
  Tensor cols({c * kh * kw, oh * ow});
  const double* src = input.data().data();
  double* dst = cols.data().data();
  const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        double* row = dst + ((ch * kh + ki) * kw + kj) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * geom.stride + ki) - pad;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * geom.stride + kj) - pad;
            if (y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(h) &&
                x < static_cast<std::ptrdiff_t>(w)) {
              row[oy * ow + ox] = src[(ch * h + static_cast<std::size_t>(y)) * w +
                                      static_cast<std::size_t>(x)];
            }
          }
        }
      }
    }
  }
  return cols;
}

Tensor col2im(const Tensor& cols, std::size_t channels, std::size_t height, std::size_t width,
              const ConvGeometry& geom) {
  require_rank(cols, 2, "col2im");
  const std::size_t oh = conv_output_extent(height, geom.kernel_h, geom.stride, geom.padding);
  const std::size_t ow = conv_output_extent(width, geom.kernel_w, geom.stride, geom.padding);
  const std::size_t kh = geom.kernel_h, kw = geom.kernel_w;
  if (cols.dim(0) != channels * kh * kw || cols.dim(1) != oh * ow) {
    throw ShapeError("col2im: column matrix " + shape_to_string(cols.shape()) +
                     " does not match the requested geometry");
  }
  Tensor out({channels, height, width});
  const double* src = cols.data().data();
  double* dst = out.data().data();
  const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
  for (std::size_t ch = 0; ch < channels; ++ch) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const double* row = src + ((ch * kh + ki) * kw + kj) * oh * ow;
        for (std::size_t oy = 0; oy < oh; ++oy) {
          const auto y = static_cast<std::ptrdiff_t>(oy * geom.stride + ki) - pad;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(height)) continue;
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const auto x = static_cast<std::ptrdiff_t>(ox * geom.stride + kj) - pad;
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(width)) continue;
            dst[(ch * height + static_cast<std::size_t>(y)) * width +
                static_cast<std::size_t>(x)] += row[oy * ow + ox];
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_forward(const Tensor& input, const Tensor& filters, std::size_t stride,
                      std::size_t padding) {
  require_rank(input, 3, "conv2d_forward");
  require_rank(filters, 4, "conv2d_forward");
  if (filters.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d_forward: filters " + shape_to_string(filters.shape()) +
                     " expect " + std::to_string(filters.dim(1)) + " input channels, input is " +
                     shape_to_string(input.shape()));
  }
  const ConvGeometry geom{filters.dim(2), filters.dim(3), stride, padding};
  const std::size_t oh = conv_output_extent(input.dim(1), geom.kernel_h, stride, padding);
  const std::size_t ow = conv_output_extent(input.dim(2), geom.kernel_w, stride, padding);
  const std::size_t c_out = filters.dim(0);
  const Tensor weights = reshape(filters, {c_out, filters.size() / c_out});
  return reshape(matmul(weights, im2col(input, geom)), {c_out, oh, ow});
}

Tensor reduce_mean_spatial(const Tensor& feature_maps) {
  require_rank(feature_maps, 3, "reduce_mean_spatial");
  const std::size_t c = feature_maps.dim(0);
  const std::size_t area = feature_maps.dim(1) * feature_maps.dim(2);
  Tensor out({c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (std::size_t i = 0; i < area; ++i) sum += feature_maps[ch * area + i];
    out[ch] = sum / static_cast<double>(area);
  }
  return out;
}

std::vector<std::size_t> argsort(std::span<const double> keys) {
  std::vector<std::size_t> order(keys.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  return order;
}

namespace {

// Splits the shape around `axis` into (outer, extent, inner) block sizes.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
  Shape reduced;
};

AxisSplit split_axis(const Tensor& a, std::size_t axis, const char* op) {
  if (axis >= a.rank()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     shape_to_string(a.shape()));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i < axis) s.outer *= a.dim(i);
    if (i > axis) s.inner *= a.dim(i);
    if (i != axis) s.reduced.push_back(a.dim(i));
  }
  s.extent = a.dim(axis);
  if (s.reduced.empty()) s.reduced.push_back(1);
  return s;
}

}  // namespace

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a, axis, "mean_axis");
  Tensor out(s.reduced);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      double sum = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) sum += a[(o * s.extent + e) * s.inner + i];
      out[o * s.inner + i] = sum / static_cast<double>(s.extent);
    }
  }
  return out;
}

Tensor stddev_axis(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a, axis, "stddev_axis");
  const Tensor mean = mean_axis(a, axis);
  Tensor out(s.reduced);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const double m = mean[o * s.inner + i];
      double ss = 0.0;
      for (std::size_t e = 0; e < s.extent; ++e) {
        const double d = a[(o * s.extent + e) * s.inner + i] - m;
        ss += d * d;
      }
      out[o * s.inner + i] = std::sqrt(ss / static_cast<double>(s.extent));
    }
  }
  return out;
}

}  // namespace thinner
