#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "softseg/tensor.hpp"

namespace softseg {

using Rgb = std::array<float, 3>;

/// Planar RGB raster, channel values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // 3 planes of height * width

  Image() = default;
  Image(int h, int w, float fill = 0.0f);

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  bool empty() const { return data.empty(); }
  float& at(int c, int y, int x) { return data[c * pixels() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return data[c * pixels() + static_cast<std::size_t>(y) * width + x]; }
  const float* plane(int c) const { return data.data() + c * pixels(); }
  float* plane(int c) { return data.data() + c * pixels(); }
  Rgb pixel(std::size_t i) const { return {data[i], data[pixels() + i], data[2 * pixels() + i]}; }
  void set_pixel(std::size_t i, const Rgb& rgb) {
    data[i] = rgb[0];
    data[pixels() + i] = rgb[1];
    data[2 * pixels() + i] = rgb[2];
  }
};

enum class PaletteSource { kAuto, kManual };

/// Ordered palette; layer i corresponds to colors[i] everywhere downstream.
struct Palette {
  static constexpr int kMaxColors = 16;

  std::vector<Rgb> colors;
  PaletteSource source = PaletteSource::kManual;
  /// Set when extraction had to duplicate centers.
  bool has_duplicates = false;

  int size() const { return static_cast<int>(colors.size()); }
  /// Throws unless 1 <= K <= 16 and every channel is in [0, 1].
  void validate() const;
};

/// K x H x W opacities.
struct AlphaStack {
  int k = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;
  bool normalized = false;

  AlphaStack() = default;
  AlphaStack(int layers, int h, int w, float fill = 0.0f);

  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  float* layer(int i) { return values.data() + i * pixels(); }
  const float* layer(int i) const { return values.data() + i * pixels(); }
  float& at(int i, std::size_t pixel) { return values[i * pixels() + pixel]; }
  float at(int i, std::size_t pixel) const { return values[i * pixels() + pixel]; }
};

/// K RGBA layers: RGB holds u_i = clip(p_i + r_i), A the processed alpha.
struct LayerStack {
  Palette palette;
  AlphaStack alphas;
  std::vector<float> colors;  // K layers x 3 planes x H x W

  int k() const { return alphas.k; }
  int height() const { return alphas.height; }
  int width() const { return alphas.width; }
  std::size_t pixels() const { return alphas.pixels(); }
  float* color_plane(int layer, int c) { return colors.data() + (layer * 3 + c) * pixels(); }
  const float* color_plane(int layer, int c) const { return colors.data() + (layer * 3 + c) * pixels(); }
  Rgb color(int layer, std::size_t pixel) const {
    return {color_plane(layer, 0)[pixel], color_plane(layer, 1)[pixel], color_plane(layer, 2)[pixel]};
  }
  void set_color(int layer, std::size_t pixel, const Rgb& rgb) {
    for (int c = 0; c < 3; ++c) color_plane(layer, c)[pixel] = rgb[c];
  }
  /// Throws unless shapes agree.
  void validate_shape() const;
};

/// [1, 3, H, W] tensor view of an image (copy).
nn::Tensor image_to_tensor(const Image& image);
/// Batch of same-sized images as [N, 3, H, W].
nn::Tensor images_to_tensor(const std::vector<Image>& images);
AlphaStack tensor_to_alphas(const nn::Tensor& t, int batch_index = 0);
nn::Tensor alphas_to_tensor(const AlphaStack& alphas);

/// Pads by reflection (without repeating the edge sample) to the given size.
Image pad_reflect(const Image& image, int height, int width);
AlphaStack pad_reflect(const AlphaStack& alphas, int height, int width);
Image crop(const Image& image, int height, int width);
AlphaStack crop(const AlphaStack& alphas, int height, int width);

}  // namespace softseg
