#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "softseg/image.hpp"

namespace softseg {

/// Gaussian color model N(mean, covariance) for one layer.
class ColorModel {
 public:
  /// Throws unless the covariance is symmetric with eigenvalues >= 1e-6.
  ColorModel(const Rgb& mean, const std::array<double, 9>& covariance);
  static ColorModel isotropic(const Rgb& mean, double variance);

  const Rgb& mean() const { return mean_; }
  const std::array<double, 9>& covariance() const { return covariance_; }
  const std::array<double, 9>& precision() const { return precision_; }
  /// Largest eigenvalue of the precision matrix.
  double max_precision() const { return max_precision_; }

  /// Squared Mahalanobis distance of u to the mean.
  double distance(const Rgb& u) const;

 private:
  Rgb mean_;
  std::array<double, 9> covariance_;
  std::array<double, 9> precision_;
  double max_precision_ = 0.0;
};

/// Isotropic 0.05^2 models centred on the palette colors.
std::vector<ColorModel> models_from_palette(const Palette& palette, double variance = 0.05 * 0.05);

struct UnmixConfig {
  double sparsity_weight = 1.0;          // sigma
  double color_constraint_weight = 100;  // penalty on ||sum a_i u_i - c||^2
  int max_iters = 200;
  double step_size = 1.0;  // first line-search step, scaled by the gradient spread
  double convergence_tol = 1e-10;
  /// Keep u_i at the model means and optimize alphas only.
  bool pin_colors = false;
  /// Start from every simplex vertex rather than only the nearest model's.
  bool all_vertex_starts = false;

  void validate() const;
};

struct PixelUnmixResult {
  std::vector<double> alphas;
  std::vector<Rgb> layer_colors;
  double energy = 0.0;     // sparse color unmixing energy
  double objective = 0.0;  // energy + color_constraint_weight * residual^2
  double residual = 0.0;   // ||sum a_i u_i - c||
  bool converged = true;
};

/// sum_i a_i D_i(u_i) + sigma (sum a / max(sum a^2, 1e-8) - 1)
double energy(std::span<const double> alphas, std::span<const Rgb> layer_colors,
              const std::vector<ColorModel>& models, double sigma);

/// Minimizes energy + penalty over the alpha simplex and the color box.
/// Alphas move by projected gradient on the simplex; for fixed alphas the
/// colors are the exact minimizer of the (convex) color subproblem clamped
/// to [0,1], so the constraints hold by construction. Descent starts from
/// the centroid and from the nearest model's vertex (every vertex with
/// all_vertex_starts); the exact one-hot candidate on the nearest model is
/// always considered, so the result never scores worse than that
/// initialization.
PixelUnmixResult unmix_pixel(const Rgb& color, const std::vector<ColorModel>& models, const UnmixConfig& cfg);

struct UnmixImageResult {
  LayerStack layers;
  std::size_t non_converged = 0;
  double mean_energy = 0.0;
};

UnmixImageResult unmix_image(const Image& image, const std::vector<ColorModel>& models, const UnmixConfig& cfg);

}  // namespace softseg
