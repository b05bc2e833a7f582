#pragma once

#include <span>
#include <vector>

#include "softseg/image.hpp"
#include "softseg/predictor.hpp"

namespace softseg {

/// a_i / (sum_k a_k + 1e-8), then an exact renormalization so every pixel
/// sums to 1. All-zero pixels become uniform 1/K.
AlphaStack normalize_alpha(const AlphaStack& raw);

/// Per-pixel sum_i a_i u_i ("alpha add").
Image compose(const LayerStack& layers);

/// Color-guided filter of one H x W layer. Windows are (2r+1)^2 squares
/// clipped at the border and averaged over the pixels they contain; the
/// result is clamped to [0, 1].
std::vector<float> guided_filter(std::span<const float> layer, const Image& guide, int radius, double eps);

enum class MaskMode { kMultiply, kSet };

/// Edits one layer's alpha with an H x W mask in [0, 1], then renormalizes
/// across layers. Where the edit leaves a pixel with zero total alpha, the
/// other layers share it uniformly.
AlphaStack apply_mask(const AlphaStack& stack, int layer, std::span<const float> mask, MaskMode mode);

/// Merges layers whose palette colors are identical: alphas add, colors
/// become the alpha-weighted mean (plain mean where the group's alpha is 0).
/// The composite is unchanged.
LayerStack merge_duplicate_layers(const LayerStack& stack);

/// Replaces one layer's palette color while keeping its residues:
/// u' = clip(new_color + (u - p)).
LayerStack recolored(const LayerStack& stack, int layer, const Rgb& new_color);
Image recolor(const LayerStack& stack, int layer, const Rgb& new_color);

struct LayerMask {
  int layer = 0;
  std::vector<float> mask;  // H x W
  MaskMode mode = MaskMode::kMultiply;
};

struct DecomposeOptions {
  bool guided_filter = false;
  int filter_radius = 4;
  double filter_eps = 1e-4;
  std::vector<LayerMask> masks;
};

/// predict_alpha -> normalize -> optional guided filter (renormalized) ->
/// masks -> predict_residues. Alpha processing happens before the colors
/// are estimated so the residue network sees the edited alphas.
LayerStack decompose(const Image& image, const Palette& palette, const ModelWeights& weights,
                     const DecomposeOptions& options = {});

/// Frame-by-frame decomposition with one fixed palette.
std::vector<LayerStack> decompose_frames(const std::vector<Image>& frames, const Palette& palette,
                                         const ModelWeights& weights, const DecomposeOptions& options = {});

}  // namespace softseg
