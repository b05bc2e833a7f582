#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace softseg::nn {

using Shape = std::vector<int>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major float32 tensor. Four-dimensional tensors are NCHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  int dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  float* raw() noexcept { return data_.data(); }
  const float* raw() const noexcept { return data_.data(); }
  std::vector<float>& storage() noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // NCHW accessors.
  float& at(int n, int c, int y, int x) {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  float at(int n, int c, int y, int x) const {
    return data_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  /// Pointer to the (n, c) plane of an NCHW tensor.
  float* plane(int n, int c) {
    return data_.data() + (static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] * shape_[3];
  }
  const float* plane(int n, int c) const {
    return data_.data() + (static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] * shape_[3];
  }

  void fill(float value);
  void reshape(Shape shape);
  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Throws a dimension error unless `t` has exactly `rank` axes.
void require_rank(const Tensor& t, std::size_t rank, const char* what);
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

/// Channel-wise concatenation of NCHW tensors with equal N, H, W.
Tensor concat_channels(std::span<const Tensor* const> parts);
Tensor concat_channels(const Tensor& a, const Tensor& b);

/// Copies channels [begin, begin + count) of an NCHW tensor.
Tensor slice_channels(const Tensor& t, int begin, int count);

/// a += b, elementwise.
void add_inplace(Tensor& a, const Tensor& b);

double dot(const Tensor& a, const Tensor& b);

}  // namespace softseg::nn
