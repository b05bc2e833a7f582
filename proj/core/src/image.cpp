#include "softseg/image.hpp"

#include <cstring>

#include "softseg/error.hpp"

namespace softseg {
namespace {

// Mirror index without edge repetition (…2 1 | 0 1 2 … n-1 | n-2 …).
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

void pad_plane(const float* src, int h, int w, float* dst, int out_h, int out_w) {
  for (int y = 0; y < out_h; ++y) {
    const float* row = src + static_cast<std::size_t>(reflect_index(y, h)) * w;
    float* out = dst + static_cast<std::size_t>(y) * out_w;
    for (int x = 0; x < out_w; ++x) out[x] = row[reflect_index(x, w)];
  }
}

void crop_plane(const float* src, int w, float* dst, int out_h, int out_w) {
  for (int y = 0; y < out_h; ++y) {
    std::memcpy(dst + static_cast<std::size_t>(y) * out_w, src + static_cast<std::size_t>(y) * w,
                out_w * sizeof(float));
  }
}

}  // namespace

Image::Image(int h, int w, float fill)
    : height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {}

AlphaStack::AlphaStack(int layers, int h, int w, float fill)
    : k(layers), height(h), width(w), values(static_cast<std::size_t>(layers) * h * w, fill) {}

void Palette::validate() const {
  if (colors.empty() || size() > kMaxColors) {
    fail(ErrorCode::kInvalidArgument,
         "palette must hold between 1 and 16 colors, got " + std::to_string(colors.size()));
  }
  for (std::size_t i = 0; i < colors.size(); ++i) {
    for (float v : colors[i]) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        fail(ErrorCode::kInvalidArgument, "palette color " + std::to_string(i) + " has a channel outside [0,1]");
      }
    }
  }
}

void LayerStack::validate_shape() const {
  if (palette.size() != alphas.k) {
    fail(ErrorCode::kDimension, "layer stack: palette has " + std::to_string(palette.size()) +
                                    " colors for " + std::to_string(alphas.k) + " layers");
  }
  if (alphas.values.size() != static_cast<std::size_t>(alphas.k) * alphas.pixels() ||
      colors.size() != static_cast<std::size_t>(alphas.k) * 3 * alphas.pixels()) {
    fail(ErrorCode::kDimension, "layer stack: buffer sizes disagree with K x H x W");
  }
}

nn::Tensor image_to_tensor(const Image& image) {
  return nn::Tensor({1, 3, image.height, image.width}, image.data);
}

nn::Tensor images_to_tensor(const std::vector<Image>& images) {
  if (images.empty()) fail(ErrorCode::kInvalidArgument, "images_to_tensor: empty batch");
  const int h = images[0].height, w = images[0].width;
  nn::Tensor t({static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].height != h || images[n].width != w) {
      fail(ErrorCode::kDimension, "images_to_tensor: batch images differ in size");
    }
    std::memcpy(t.plane(static_cast<int>(n), 0), images[n].data.data(), images[n].data.size() * sizeof(float));
  }
  return t;
}

AlphaStack tensor_to_alphas(const nn::Tensor& t, int batch_index) {
  nn::require_rank(t, 4, "tensor_to_alphas");
  AlphaStack a(t.dim(1), t.dim(2), t.dim(3));
  std::memcpy(a.values.data(), t.plane(batch_index, 0), a.values.size() * sizeof(float));
  return a;
}

nn::Tensor alphas_to_tensor(const AlphaStack& alphas) {
  return nn::Tensor({1, alphas.k, alphas.height, alphas.width}, alphas.values);
}

Image pad_reflect(const Image& image, int height, int width) {
  Image out(height, width);
  for (int c = 0; c < 3; ++c) pad_plane(image.plane(c), image.height, image.width, out.plane(c), height, width);
  return out;
}

AlphaStack pad_reflect(const AlphaStack& alphas, int height, int width) {
  AlphaStack out(alphas.k, height, width);
  out.normalized = alphas.normalized;
  for (int i = 0; i < alphas.k; ++i) pad_plane(alphas.layer(i), alphas.height, alphas.width, out.layer(i), height, width);
  return out;
}

Image crop(const Image& image, int height, int width) {
  Image out(height, width);
  for (int c = 0; c < 3; ++c) crop_plane(image.plane(c), image.width, out.plane(c), height, width);
  return out;
}

AlphaStack crop(const AlphaStack& alphas, int height, int width) {
  AlphaStack out(alphas.k, height, width);
  out.normalized = alphas.normalized;
  for (int i = 0; i < alphas.k; ++i) crop_plane(alphas.layer(i), alphas.width, out.layer(i), height, width);
  return out;
}

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimension: return "dimension_error";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kParse: return "parse_error";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kPaletteMismatch: return "palette_mismatch";
    case ErrorCode::kNumeric: return "numeric_error";
  }
  return "error";
}

}  // namespace softseg
