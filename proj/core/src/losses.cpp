#include "softseg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "softseg/error.hpp"

namespace softseg {

using nn::Tensor;

namespace {

float sign(double v) { return v > 0.0 ? 1.0f : (v < 0.0 ? -1.0f : 0.0f); }

void check_shapes(const Tensor& images, const std::vector<Palette>& palettes, const Tensor& alphas,
                  const Tensor& colors) {
  nn::require_rank(images, 4, "losses");
  nn::require_rank(alphas, 4, "losses");
  nn::require_rank(colors, 4, "losses");
  const int n = images.dim(0), k = alphas.dim(1);
  if (images.dim(1) != 3 || alphas.dim(0) != n || colors.dim(0) != n || colors.dim(1) != 3 * k ||
      alphas.dim(2) != images.dim(2) || alphas.dim(3) != images.dim(3) || colors.dim(2) != images.dim(2) ||
      colors.dim(3) != images.dim(3)) {
    fail(ErrorCode::kDimension, "losses: images " + nn::shape_string(images.shape()) + ", alphas " +
                                    nn::shape_string(alphas.shape()) + ", colors " + nn::shape_string(colors.shape()));
  }
  if (static_cast<int>(palettes.size()) != n) fail(ErrorCode::kDimension, "losses: one palette per image");
  for (const Palette& p : palettes) {
    if (p.size() != k) fail(ErrorCode::kPaletteMismatch, "losses: palette size differs from K");
  }
}

}  // namespace

LossTerms compute_losses(const Tensor& images, const std::vector<Palette>& palettes, const Tensor& alphas,
                         const Tensor& colors, const LossWeights& weights, LossGrads* grads) {
  check_shapes(images, palettes, alphas, colors);
  const int n = images.dim(0), k = alphas.dim(1);
  const std::size_t plane = static_cast<std::size_t>(images.dim(2)) * images.dim(3);
  const double pixel_count = static_cast<double>(plane) * n;
  const double channel_count = pixel_count * 3.0;

  if (grads) {
    grads->d_alphas = Tensor(alphas.shape());
    grads->d_colors = Tensor(colors.shape());
  }
  // Per-element gradient scales.
  const float g_r = static_cast<float>(1.0 / channel_count);
  const float g_a = static_cast<float>(weights.lambda_a / channel_count);
  const float g_d = static_cast<float>(weights.lambda_d / pixel_count);

  double sum_r = 0.0, sum_a = 0.0, sum_d = 0.0;
  std::vector<const float*> a(k), u(3 * k);
  std::vector<float*> da(k), du(3 * k);
  for (int b = 0; b < n; ++b) {
    const Palette& pal = palettes[b];
    for (int i = 0; i < k; ++i) {
      a[i] = alphas.plane(b, i);
      if (grads) da[i] = grads->d_alphas.plane(b, i);
    }
    for (int j = 0; j < 3 * k; ++j) {
      u[j] = colors.plane(b, j);
      if (grads) du[j] = grads->d_colors.plane(b, j);
    }
    const float* c[3] = {images.plane(b, 0), images.plane(b, 1), images.plane(b, 2)};
    for (std::size_t px = 0; px < plane; ++px) {
      float s_r[3], s_a[3];
      for (int ch = 0; ch < 3; ++ch) {
        double comp = 0.0, comp_p = 0.0;
        for (int i = 0; i < k; ++i) {
          comp += static_cast<double>(a[i][px]) * u[3 * i + ch][px];
          comp_p += static_cast<double>(a[i][px]) * pal.colors[i][ch];
        }
        const double e_r = comp - c[ch][px];
        const double e_a = comp_p - c[ch][px];
        sum_r += std::abs(e_r);
        sum_a += std::abs(e_a);
        s_r[ch] = sign(e_r) * g_r;
        s_a[ch] = sign(e_a) * g_a;
      }
      for (int i = 0; i < k; ++i) {
        double dist_sq = 0.0;
        float diff[3];
        for (int ch = 0; ch < 3; ++ch) {
          diff[ch] = u[3 * i + ch][px] - pal.colors[i][ch];
          dist_sq += static_cast<double>(diff[ch]) * diff[ch];
        }
        const double dist = std::sqrt(dist_sq);
        sum_d += a[i][px] * dist;
        if (!grads) continue;
        float g_alpha = 0.0f;
        for (int ch = 0; ch < 3; ++ch) {
          g_alpha += s_r[ch] * u[3 * i + ch][px] + s_a[ch] * pal.colors[i][ch];
          float g_u = s_r[ch] * a[i][px];
          if (dist > 0.0) g_u += g_d * a[i][px] * static_cast<float>(diff[ch] / dist);
          du[3 * i + ch][px] += g_u;
        }
        da[i][px] += g_alpha + g_d * static_cast<float>(dist);
      }
    }
  }

  LossTerms terms;
  terms.reconstruction = sum_r / channel_count;
  terms.regularization = sum_a / channel_count;
  terms.distance = sum_d / pixel_count;
  terms.total = terms.reconstruction + weights.lambda_a * terms.regularization + weights.lambda_d * terms.distance;
  return terms;
}

namespace {

Tensor colors_tensor(const std::vector<float>& layer_colors, const AlphaStack& alphas) {
  if (layer_colors.size() != static_cast<std::size_t>(alphas.k) * 3 * alphas.pixels()) {
    fail(ErrorCode::kDimension, "layer colors must hold K x 3 planes of the alpha size");
  }
  return Tensor({1, 3 * alphas.k, alphas.height, alphas.width}, layer_colors);
}

Tensor image_tensor(const Image& image, const AlphaStack& alphas) {
  if (image.height != alphas.height || image.width != alphas.width) {
    fail(ErrorCode::kDimension, "image and alpha stack differ in size");
  }
  return image_to_tensor(image);
}

// Palette colors broadcast as layer colors (zero residues).
std::vector<float> palette_planes(const Palette& palette, const AlphaStack& alphas) {
  std::vector<float> planes(static_cast<std::size_t>(alphas.k) * 3 * alphas.pixels());
  for (int i = 0; i < alphas.k; ++i) {
    for (int c = 0; c < 3; ++c) {
      std::fill_n(planes.begin() + (static_cast<std::size_t>(i) * 3 + c) * alphas.pixels(), alphas.pixels(),
                  palette.colors[i][c]);
    }
  }
  return planes;
}

Palette placeholder_palette(int k) {
  Palette p;
  p.colors.assign(k, Rgb{0.0f, 0.0f, 0.0f});
  return p;
}

}  // namespace

double loss_reconstruction(const AlphaStack& alphas, const std::vector<float>& layer_colors, const Image& image) {
  return compute_losses(image_tensor(image, alphas), {placeholder_palette(alphas.k)}, alphas_to_tensor(alphas),
                        colors_tensor(layer_colors, alphas), LossWeights{0.0, 0.0}, nullptr)
      .reconstruction;
}

double loss_alpha_regularization(const AlphaStack& alphas, const Palette& palette, const Image& image) {
  return compute_losses(image_tensor(image, alphas), {palette}, alphas_to_tensor(alphas),
                        colors_tensor(palette_planes(palette, alphas), alphas), LossWeights{1.0, 0.0}, nullptr)
      .regularization;
}

double loss_distance(const AlphaStack& alphas, const Palette& palette, const std::vector<float>& layer_colors) {
  const Image blank(alphas.height, alphas.width);
  return compute_losses(image_to_tensor(blank), {palette}, alphas_to_tensor(alphas),
                        colors_tensor(layer_colors, alphas), LossWeights{0.0, 1.0}, nullptr)
      .distance;
}

LossTerms loss_total(const AlphaStack& alphas, const Palette& palette, const std::vector<float>& layer_colors,
                     const Image& image, const LossWeights& weights) {
  return compute_losses(image_tensor(image, alphas), {palette}, alphas_to_tensor(alphas),
                        colors_tensor(layer_colors, alphas), weights, nullptr);
}

}  // namespace softseg
