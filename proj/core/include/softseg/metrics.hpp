#pragma once

#include <string>
#include <vector>

#include "softseg/image.hpp"

namespace softseg {

/// Mean over pixels and channels of the squared difference.
double reconstruction_mse(const Image& original, const Image& reconstructed);
/// 10 log10(1 / mse) with peak 1; exact matches report 100 dB.
double psnr(const Image& original, const Image& reconstructed);
double psnr_from_mse(double mse);
/// Mean local SSIM of the channel-mean gray images: 11x11 Gaussian window
/// (sigma 1.5), K1 = 0.01, K2 = 0.03, valid windows only.
double ssim(const Image& original, const Image& reconstructed);
/// Mean over pixels of sum(a) / sum(a^2) - 1.
double sparsity_score(const AlphaStack& alphas);
/// Per layer, the summed per-channel variance of u_i over pixels with
/// a_i > threshold; averaged over all layers (empty layers count as 0).
double color_variance(const LayerStack& stack, double threshold = 0.01);

struct ImageReport {
  std::string name;
  double reconstruction_mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double sparsity = 0.0;
  double color_variance = 0.0;
};

struct EvalReport {
  double reconstruction_mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double sparsity = 0.0;
  double color_variance = 0.0;
  std::vector<ImageReport> per_image;

  std::string to_json() const;
  std::string to_table() const;
};

/// Scores one decomposition against its source image.
ImageReport evaluate_layers(const Image& original, const LayerStack& layers, const std::string& name = "");
/// Averages the per-image scores.
EvalReport summarize(std::vector<ImageReport> reports);

}  // namespace softseg
