#pragma once

#include <vector>

#include "softseg/image.hpp"
#include "softseg/tensor.hpp"

namespace softseg {

struct LossWeights {
  double lambda_a = 1.0;  // alpha regularization (palette-only reconstruction)
  double lambda_d = 0.5;  // distance of layer colors to their palette color
};

struct LossTerms {
  double total = 0.0;
  double reconstruction = 0.0;
  double regularization = 0.0;
  double distance = 0.0;
};

/// Gradients of the weighted total w.r.t. the normalized alphas [N,K,H,W] and
/// the layer colors [N,3K,H,W].
struct LossGrads {
  nn::Tensor d_alphas;
  nn::Tensor d_colors;
};

/// Batched objective:
///   L_r = mean |sum_i a_i u_i - c|            (over pixels and channels)
///   L_a = mean |sum_i a_i p_i - c|
///   L_d = mean over pixels of sum_i a_i ||p_i - u_i||_2
///   total = L_r + lambda_a L_a + lambda_d L_d
/// `grads` is filled when non-null.
LossTerms compute_losses(const nn::Tensor& images, const std::vector<Palette>& palettes, const nn::Tensor& alphas,
                         const nn::Tensor& colors, const LossWeights& weights, LossGrads* grads);

// Single-image forms over the library's domain types. Layer colors are K x 3
// planes as in LayerStack::colors.
double loss_reconstruction(const AlphaStack& alphas, const std::vector<float>& layer_colors, const Image& image);
double loss_alpha_regularization(const AlphaStack& alphas, const Palette& palette, const Image& image);
double loss_distance(const AlphaStack& alphas, const Palette& palette, const std::vector<float>& layer_colors);
LossTerms loss_total(const AlphaStack& alphas, const Palette& palette, const std::vector<float>& layer_colors,
                     const Image& image, const LossWeights& weights);

}  // namespace softseg
