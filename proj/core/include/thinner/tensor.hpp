#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace thinner {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Dense row-major array of doubles; the last dimension is contiguous.
/// Every dimension is at least 1 and size() == product(shape()).
class Tensor {
 public:
  /// Zero-filled tensor.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);
  Tensor(std::initializer_list<std::size_t> shape) : Tensor(Shape(shape)) {}

  static Tensor filled(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  template <typename... Index>
  double& operator()(Index... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <typename... Index>
  double operator()(Index... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  /// Row-major flat offset of a full index tuple. Bounds are not checked.
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : idx) off = off * shape_[axis++] + i;
    return off;
  }

  void fill(double value);

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Standard matrix product of [m x k] and [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor reshape(const Tensor& a, Shape shape);

struct ConvGeometry {
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// floor((in + 2*padding - kernel) / stride) + 1; throws if the kernel
/// does not fit in the padded input.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                               std::size_t padding);

/// Unfolds [c x h x w] into [c*kh*kw x h'*w'] patch columns (zero padded).
Tensor im2col(const Tensor& input, const ConvGeometry& geom);

/// Adjoint of im2col: scatters columns back into a [c x h x w] tensor,
/// accumulating overlapping patches.
Tensor col2im(const Tensor& cols, std::size_t channels, std::size_t height, std::size_t width,
              const ConvGeometry& geom);

/// Cross-correlation of [c_in x h x w] with [c_out x c_in x kh x kw] filters.
Tensor conv2d_forward(const Tensor& input, const Tensor& filters, std::size_t stride,
                      std::size_t padding);

/// Per-channel mean over the spatial map of a [c x h x w] tensor.
Tensor reduce_mean_spatial(const Tensor& feature_maps);

/// Stable ascending argsort: equal keys keep ascending index order.
std::vector<std::size_t> argsort(std::span<const double> keys);

/// Mean along one axis; the axis is removed from the result shape
/// (a rank-1 input yields shape {1}).
Tensor mean_axis(const Tensor& a, std::size_t axis);

/// Population standard deviation along one axis.
Tensor stddev_axis(const Tensor& a, std::size_t axis);

}  // namespace thinner
