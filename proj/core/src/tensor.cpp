#include "softseg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <numeric>

#include "softseg/error.hpp"

namespace softseg::nn {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) fail(ErrorCode::kDimension, "negative dimension in shape " + shape_string(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_numel(shape_)) {
    fail(ErrorCode::kDimension, "tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_string(shape_));
  }
}

void Tensor::fill(float value) { std::fill(data_.begin(), data_.end(), value); }

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != data_.size()) {
    fail(ErrorCode::kDimension,
         "cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  shape_ = std::move(shape);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    fail(ErrorCode::kDimension, std::string(what) + ": expected rank " + std::to_string(rank) +
                                    ", got shape " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    fail(ErrorCode::kDimension, std::string(what) + ": shape " + shape_string(a.shape()) +
                                    " vs " + shape_string(b.shape()));
  }
}

Tensor concat_channels(std::span<const Tensor* const> parts) {
  if (parts.empty()) fail(ErrorCode::kDimension, "concat_channels: no inputs");
  const Tensor& first = *parts.front();
  require_rank(first, 4, "concat_channels");
  int channels = 0;
  for (const Tensor* p : parts) {
    require_rank(*p, 4, "concat_channels");
    if (p->dim(0) != first.dim(0) || p->dim(2) != first.dim(2) || p->dim(3) != first.dim(3)) {
      fail(ErrorCode::kDimension, "concat_channels: " + shape_string(p->shape()) + " vs " +
                                      shape_string(first.shape()));
    }
    channels += p->dim(1);
  }
  const int n = first.dim(0);
  const std::size_t hw = static_cast<std::size_t>(first.dim(2)) * first.dim(3);
  Tensor out({n, channels, first.dim(2), first.dim(3)});
  for (int b = 0; b < n; ++b) {
    int c0 = 0;
    for (const Tensor* p : parts) {
      const std::size_t count = static_cast<std::size_t>(p->dim(1)) * hw;
      std::memcpy(out.plane(b, c0), p->plane(b, 0), count * sizeof(float));
      c0 += p->dim(1);
    }
  }
  return out;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  const Tensor* parts[] = {&a, &b};
  return concat_channels(parts);
}

Tensor slice_channels(const Tensor& t, int begin, int count) {
  require_rank(t, 4, "slice_channels");
  if (begin < 0 || count < 0 || begin + count > t.dim(1)) {
    fail(ErrorCode::kDimension, "slice_channels: range [" + std::to_string(begin) + "," +
                                    std::to_string(begin + count) + ") outside " +
                                    shape_string(t.shape()));
  }
  Tensor out({t.dim(0), count, t.dim(2), t.dim(3)});
  const std::size_t bytes = static_cast<std::size_t>(count) * t.dim(2) * t.dim(3) * sizeof(float);
  for (int n = 0; n < t.dim(0); ++n) std::memcpy(out.plane(n, 0), t.plane(n, begin), bytes);
  return out;
}

void add_inplace(Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add_inplace");
  float* pa = a.raw();
  const float* pb = b.raw();
  for (std::size_t i = 0; i < a.numel(); ++i) pa[i] += pb[i];
}

double dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += static_cast<double>(a[i]) * b[i];
  return acc;
}

}  // namespace softseg::nn
