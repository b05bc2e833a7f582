#include "softseg/layer_ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "softseg/error.hpp"
#include "softseg/parallel.hpp"

namespace softseg {
namespace {

constexpr double kNormEps = 1e-8;

void check_stack(const AlphaStack& s, const char* what) {
  if (s.k < 1 || s.values.size() != static_cast<std::size_t>(s.k) * s.pixels()) {
    fail(ErrorCode::kDimension, std::string(what) + ": alpha stack buffer does not match K x H x W");
  }
}

void check_layer(int layer, int k, const char* what) {
  if (layer < 0 || layer >= k) {
    fail(ErrorCode::kInvalidArgument, std::string(what) + ": layer index " + std::to_string(layer) +
                                          " out of range for K=" + std::to_string(k));
  }
}

// Clipped-window box mean via a summed-area table (double).
class BoxMean {
 public:
  BoxMean(int h, int w, int r) : h_(h), w_(w), r_(r), sat_(static_cast<std::size_t>(h + 1) * (w + 1)) {}

  void operator()(const double* src, double* dst) {
    for (int y = 0; y < h_; ++y) {
      double row = 0.0;
      for (int x = 0; x < w_; ++x) {
        row += src[static_cast<std::size_t>(y) * w_ + x];
        at(y + 1, x + 1) = at(y, x + 1) + row;
      }
    }
    for (int y = 0; y < h_; ++y) {
      const int y0 = std::max(0, y - r_), y1 = std::min(h_, y + r_ + 1);
      for (int x = 0; x < w_; ++x) {
        const int x0 = std::max(0, x - r_), x1 = std::min(w_, x + r_ + 1);
        const double sum = at(y1, x1) - at(y0, x1) - at(y1, x0) + at(y0, x0);
        dst[static_cast<std::size_t>(y) * w_ + x] = sum / ((y1 - y0) * (x1 - x0));
      }
    }
  }

 private:
  double& at(int y, int x) { return sat_[static_cast<std::size_t>(y) * (w_ + 1) + x]; }

  int h_, w_, r_;
  std::vector<double> sat_;
};

}  // namespace

AlphaStack normalize_alpha(const AlphaStack& raw) {
  check_stack(raw, "normalize_alpha");
  AlphaStack out = raw;
  const std::size_t n = raw.pixels();
  for (std::size_t px = 0; px < n; ++px) {
    double sum = 0.0;
    for (int i = 0; i < raw.k; ++i) sum += raw.at(i, px);
    std::array<double, Palette::kMaxColors> a{};
    double exact = 0.0;
    for (int i = 0; i < raw.k; ++i) {
      a[i] = raw.at(i, px) / (sum + kNormEps);
      exact += a[i];
    }
    for (int i = 0; i < raw.k; ++i) {
      out.at(i, px) = exact > 0.0 ? static_cast<float>(a[i] / exact) : 1.0f / static_cast<float>(raw.k);
    }
  }
  out.normalized = true;
  return out;
}

Image compose(const LayerStack& layers) {
  layers.validate_shape();
  Image out(layers.height(), layers.width());
  const std::size_t n = layers.pixels();
  for (int c = 0; c < 3; ++c) {
    float* dst = out.plane(c);
    for (std::size_t px = 0; px < n; ++px) {
      double v = 0.0;
      for (int i = 0; i < layers.k(); ++i) v += static_cast<double>(layers.alphas.at(i, px)) * layers.color_plane(i, c)[px];
      dst[px] = static_cast<float>(v);
    }
  }
  return out;
}

std::vector<float> guided_filter(std::span<const float> layer, const Image& guide, int radius, double eps) {
  if (radius < 1) fail(ErrorCode::kInvalidArgument, "guided_filter: radius must be >= 1");
  if (!(eps > 0.0)) fail(ErrorCode::kInvalidArgument, "guided_filter: eps must be > 0");
  if (layer.size() != guide.pixels()) fail(ErrorCode::kDimension, "guided_filter: layer and guide differ in size");
  const int h = guide.height, w = guide.width;
  const std::size_t n = guide.pixels();
  BoxMean box(h, w, radius);

  // Means of I, p, I*p and the upper triangle of I*I^T.
  std::vector<double> in(n), p(layer.begin(), layer.end());
  std::vector<double> mean_p(n), mean_i[3], mean_ip[3], mean_ii[6];
  box(p.data(), mean_p.data());
  for (int c = 0; c < 3; ++c) {
    mean_i[c].resize(n);
    mean_ip[c].resize(n);
    for (std::size_t k = 0; k < n; ++k) in[k] = guide.plane(c)[k];
    box(in.data(), mean_i[c].data());
    for (std::size_t k = 0; k < n; ++k) in[k] = guide.plane(c)[k] * p[k];
    box(in.data(), mean_ip[c].data());
  }
  const int pairs[6][2] = {{0, 0}, {0, 1}, {0, 2}, {1, 1}, {1, 2}, {2, 2}};
  for (int q = 0; q < 6; ++q) {
    mean_ii[q].resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      in[k] = static_cast<double>(guide.plane(pairs[q][0])[k]) * guide.plane(pairs[q][1])[k];
    }
    box(in.data(), mean_ii[q].data());
  }

  // Per-window linear model q = a^T I + b.
  std::vector<double> coef[4];
  for (auto& v : coef) v.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double mi[3] = {mean_i[0][k], mean_i[1][k], mean_i[2][k]};
    double s[6];
    for (int q = 0; q < 6; ++q) s[q] = mean_ii[q][k] - mi[pairs[q][0]] * mi[pairs[q][1]];
    s[0] += eps;
    s[3] += eps;
    s[5] += eps;
    const double cov[3] = {mean_ip[0][k] - mi[0] * mean_p[k], mean_ip[1][k] - mi[1] * mean_p[k],
                           mean_ip[2][k] - mi[2] * mean_p[k]};
    // Symmetric 3x3 inverse by cofactors.
    const double c00 = s[3] * s[5] - s[4] * s[4], c01 = s[2] * s[4] - s[1] * s[5], c02 = s[1] * s[4] - s[2] * s[3];
    const double c11 = s[0] * s[5] - s[2] * s[2], c12 = s[1] * s[2] - s[0] * s[4], c22 = s[0] * s[3] - s[1] * s[1];
    const double det = s[0] * c00 + s[1] * c01 + s[2] * c02;
    const double a0 = (c00 * cov[0] + c01 * cov[1] + c02 * cov[2]) / det;
    const double a1 = (c01 * cov[0] + c11 * cov[1] + c12 * cov[2]) / det;
    const double a2 = (c02 * cov[0] + c12 * cov[1] + c22 * cov[2]) / det;
    coef[0][k] = a0;
    coef[1][k] = a1;
    coef[2][k] = a2;
    coef[3][k] = mean_p[k] - a0 * mi[0] - a1 * mi[1] - a2 * mi[2];
  }
  std::vector<double> smooth[4];
  for (int q = 0; q < 4; ++q) {
    smooth[q].resize(n);
    box(coef[q].data(), smooth[q].data());
  }
  std::vector<float> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const double v = smooth[0][k] * guide.plane(0)[k] + smooth[1][k] * guide.plane(1)[k] +
                     smooth[2][k] * guide.plane(2)[k] + smooth[3][k];
    out[k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
  }
  return out;
}

AlphaStack apply_mask(const AlphaStack& stack, int layer, std::span<const float> mask, MaskMode mode) {
  check_stack(stack, "apply_mask");
  check_layer(layer, stack.k, "apply_mask");
  if (mask.size() != stack.pixels()) fail(ErrorCode::kDimension, "apply_mask: mask size differs from the alpha stack");
  AlphaStack edited = stack;
  float* a = edited.layer(layer);
  for (std::size_t px = 0; px < stack.pixels(); ++px) {
    const float m = std::clamp(mask[px], 0.0f, 1.0f);
    a[px] = mode == MaskMode::kMultiply ? a[px] * m : m;
  }
  for (std::size_t px = 0; px < stack.pixels(); ++px) {
    double sum = 0.0;
    for (int i = 0; i < stack.k; ++i) sum += edited.at(i, px);
    if (sum > 0.0 || stack.k == 1) continue;
    for (int i = 0; i < stack.k; ++i) edited.at(i, px) = i == layer ? 0.0f : 1.0f;
  }
  return normalize_alpha(edited);
}

LayerStack merge_duplicate_layers(const LayerStack& stack) {
  stack.validate_shape();
  const int k = stack.k();
  std::vector<int> group_of(k, -1);
  std::vector<std::vector<int>> groups;
  for (int i = 0; i < k; ++i) {
    if (group_of[i] >= 0) continue;
    group_of[i] = static_cast<int>(groups.size());
    groups.push_back({i});
    for (int j = i + 1; j < k; ++j) {
      if (group_of[j] < 0 && stack.palette.colors[j] == stack.palette.colors[i]) {
        group_of[j] = group_of[i];
        groups.back().push_back(j);
      }
    }
  }
  if (static_cast<int>(groups.size()) == k) return stack;

  LayerStack out;
  out.palette = stack.palette;
  out.palette.colors.clear();
  out.palette.has_duplicates = false;
  const int m = static_cast<int>(groups.size());
  out.alphas = AlphaStack(m, stack.height(), stack.width());
  out.alphas.normalized = stack.alphas.normalized;
  out.colors.assign(static_cast<std::size_t>(m) * 3 * stack.pixels(), 0.0f);
  for (int g = 0; g < m; ++g) {
    const std::vector<int>& members = groups[g];
    out.palette.colors.push_back(stack.palette.colors[members[0]]);
    for (std::size_t px = 0; px < stack.pixels(); ++px) {
      double a = 0.0, u[3] = {0.0, 0.0, 0.0}, plain[3] = {0.0, 0.0, 0.0};
      for (int i : members) {
        const double ai = stack.alphas.at(i, px);
        a += ai;
        for (int c = 0; c < 3; ++c) {
          u[c] += ai * stack.color_plane(i, c)[px];
          plain[c] += stack.color_plane(i, c)[px];
        }
      }
      out.alphas.at(g, px) = static_cast<float>(a);
      for (int c = 0; c < 3; ++c) {
        const double v = a > 0.0 ? u[c] / a : plain[c] / static_cast<double>(members.size());
        out.color_plane(g, c)[px] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

LayerStack recolored(const LayerStack& stack, int layer, const Rgb& new_color) {
  stack.validate_shape();
  check_layer(layer, stack.k(), "recolor");
  for (float v : new_color) {
    if (!(v >= 0.0f && v <= 1.0f)) fail(ErrorCode::kInvalidArgument, "recolor: color channel outside [0,1]");
  }
  LayerStack out = stack;
  const Rgb old = stack.palette.colors[layer];
  out.palette.colors[layer] = new_color;
  if (old == new_color) return out;
  for (int c = 0; c < 3; ++c) {
    float* u = out.color_plane(layer, c);
    for (std::size_t px = 0; px < stack.pixels(); ++px) u[px] = std::clamp(new_color[c] + (u[px] - old[c]), 0.0f, 1.0f);
  }
  return out;
}

Image recolor(const LayerStack& stack, int layer, const Rgb& new_color) {
  return compose(recolored(stack, layer, new_color));
}

LayerStack decompose(const Image& image, const Palette& palette, const ModelWeights& weights,
                     const DecomposeOptions& options) {
  palette.validate();
  if (palette.size() != weights.k) {
    fail(ErrorCode::kPaletteMismatch, "decompose: palette has " + std::to_string(palette.size()) +
                                          " colors but the weights were trained for K=" + std::to_string(weights.k));
  }
  LayerStack out;
  out.palette = palette;
  out.alphas = normalize_alpha(predict_alpha(image, palette, weights));
  if (options.guided_filter) {
    AlphaStack filtered = out.alphas;
    parallel_for(0, filtered.k, [&](int i) {
      const std::vector<float> f = guided_filter(std::span<const float>(out.alphas.layer(i), out.alphas.pixels()), image,
                                                 options.filter_radius, options.filter_eps);
      std::copy(f.begin(), f.end(), filtered.layer(i));
    });
    out.alphas = normalize_alpha(filtered);
  }
  for (const LayerMask& m : options.masks) out.alphas = apply_mask(out.alphas, m.layer, m.mask, m.mode);
  out.colors = layer_colors(palette, predict_residues(image, palette, out.alphas, weights));
  return out;
}

std::vector<LayerStack> decompose_frames(const std::vector<Image>& frames, const Palette& palette,
                                         const ModelWeights& weights, const DecomposeOptions& options) {
  std::vector<LayerStack> out;
  out.reserve(frames.size());
  for (const Image& f : frames) out.push_back(decompose(f, palette, weights, options));
  return out;
}

}  // namespace softseg
