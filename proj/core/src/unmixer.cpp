#include "softseg/unmixer.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "softseg/error.hpp"
#include "softseg/parallel.hpp"

namespace softseg {
namespace {

constexpr int kMax = Palette::kMaxColors;
constexpr double kSquareFloor = 1e-8;

using Vec = std::array<double, kMax>;
using Colors = std::array<std::array<double, 3>, kMax>;

double sparsity_term(const double* a, int k) {
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < k; ++i) {
    s1 += a[i];
    s2 += a[i] * a[i];
  }
  return s1 / std::max(s2, kSquareFloor) - 1.0;
}

double mahalanobis(const ColorModel& m, const double* u) {
  const auto& p = m.precision();
  const double d[3] = {u[0] - m.mean()[0], u[1] - m.mean()[1], u[2] - m.mean()[2]};
  double s = 0.0;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) s += d[r] * p[r * 3 + c] * d[c];
  }
  return s;
}

// Objective and (optionally) its gradients for one pixel.
struct Problem {
  const std::vector<ColorModel>& models;
  const UnmixConfig& cfg;
  std::array<double, 3> c;
  int k;

  double eval(const Vec& a, const Colors& u, double* e_out = nullptr, double* res_out = nullptr) const {
    double e = cfg.sparsity_weight * sparsity_term(a.data(), k);
    double r[3] = {-c[0], -c[1], -c[2]};
    for (int i = 0; i < k; ++i) {
      if (a[i] != 0.0) e += a[i] * mahalanobis(models[i], u[i].data());
      for (int ch = 0; ch < 3; ++ch) r[ch] += a[i] * u[i][ch];
    }
    const double r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
    if (e_out) *e_out = e;
    if (res_out) *res_out = std::sqrt(r2);
    return e + cfg.color_constraint_weight * r2;
  }

  // Gradient w.r.t. alphas and colors.
  void grad(const Vec& a, const Colors& u, Vec& ga, Colors& gu) const {
    double s1 = 0.0, s2 = 0.0;
    double r[3] = {-c[0], -c[1], -c[2]};
    for (int i = 0; i < k; ++i) {
      s1 += a[i];
      s2 += a[i] * a[i];
      for (int ch = 0; ch < 3; ++ch) r[ch] += a[i] * u[i][ch];
    }
    const double w2 = 2.0 * cfg.color_constraint_weight;
    const double sig = cfg.sparsity_weight;
    const bool floored = s2 < kSquareFloor;
    const double s2f = std::max(s2, kSquareFloor);
    for (int i = 0; i < k; ++i) {
      const ColorModel& m = models[i];
      const auto& p = m.precision();
      const double d[3] = {u[i][0] - m.mean()[0], u[i][1] - m.mean()[1], u[i][2] - m.mean()[2]};
      double dist = 0.0, ru = 0.0;
      for (int row = 0; row < 3; ++row) {
        const double pd = p[row * 3] * d[0] + p[row * 3 + 1] * d[1] + p[row * 3 + 2] * d[2];
        dist += d[row] * pd;
        ru += r[row] * u[i][row];
        gu[i][row] = a[i] * (2.0 * pd + w2 * r[row]);
      }
      ga[i] = dist + sig * (1.0 / s2f - (floored ? 0.0 : 2.0 * s1 * a[i] / (s2 * s2))) + w2 * ru;
    }
  }
};

struct Candidate {
  Vec a{};
  Colors u{};
  double objective = std::numeric_limits<double>::infinity();
  bool converged = true;
};

bool is_diagonal(const ColorModel& m) {
  const auto& p = m.precision();
  return p[1] == 0.0 && p[2] == 0.0 && p[3] == 0.0 && p[5] == 0.0 && p[6] == 0.0 && p[7] == 0.0;
}

// Optimal layer colors for fixed alphas. With diagonal precisions the
// problem splits per channel: u_i = clamp(m_i - lambda / P_i) where
// lambda = w * (sum a_i u_i - c) is the root of an increasing piecewise-linear
// function, found by safeguarded Newton.
void solve_colors_diagonal(const Problem& pb, const Vec& a, Colors& u) {
  const double w = pb.cfg.color_constraint_weight;
  for (int ch = 0; ch < 3; ++ch) {
    const double c = pb.c[ch];
    auto colors_at = [&](double lambda, double* slope) {
      double s = 0.0, ds = 0.0;
      for (int i = 0; i < pb.k; ++i) {
        const double v = 1.0 / pb.models[i].precision()[ch * 4];
        const double raw = pb.models[i].mean()[ch] - v * lambda;
        u[i][ch] = std::clamp(raw, 0.0, 1.0);
        s += a[i] * u[i][ch];
        if (raw > 0.0 && raw < 1.0) ds += a[i] * v;
      }
      if (slope) *slope = 1.0 + w * ds;
      return s;
    };
    if (w == 0.0) {
      colors_at(0.0, nullptr);
      continue;
    }
    double lo = -w * c, hi = w * (1.0 - c);
    double lambda = 0.0;
    for (int it = 0; it < 60; ++it) {
      double slope = 1.0;
      const double phi = lambda - w * (colors_at(lambda, &slope) - c);
      if (phi == 0.0) break;
      (phi > 0.0 ? hi : lo) = lambda;
      double next = lambda - phi / slope;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      if (std::abs(next - lambda) <= 1e-15 * (1.0 + std::abs(lambda))) break;
      lambda = next;
    }
    colors_at(lambda, nullptr);
  }
}

// General covariances: preconditioned projected gradient on the (convex)
// color subproblem, warm-started from u.
void solve_colors_general(const Problem& pb, const Vec& a, Colors& u) {
  Vec ga{};
  Colors gu{};
  for (int it = 0; it < 200; ++it) {
    pb.grad(a, u, ga, gu);
    double moved = 0.0;
    for (int i = 0; i < pb.k; ++i) {
      if (a[i] == 0.0) continue;
      const double h = 2.0 * a[i] * pb.models[i].max_precision() +
                       2.0 * pb.cfg.color_constraint_weight * a[i] * a[i] * pb.k;
      for (int ch = 0; ch < 3; ++ch) {
        const double v = std::clamp(u[i][ch] - gu[i][ch] / h, 0.0, 1.0);
        moved = std::max(moved, std::abs(v - u[i][ch]));
        u[i][ch] = v;
      }
    }
    if (moved < 1e-12) break;
  }
}

// Euclidean projection onto the probability simplex (sort-based).
void project_simplex(Vec& v, int k) {
  Vec sorted = v;
  std::sort(sorted.begin(), sorted.begin() + k, std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (int i = 0; i < k; ++i) {
    cum += sorted[i];
    const double t = (cum - 1.0) / (i + 1);
    if (sorted[i] - t > 0.0) theta = t;
  }
  for (int i = 0; i < k; ++i) v[i] = std::max(v[i] - theta, 0.0);
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += v[i];
  for (int i = 0; i < k; ++i) v[i] /= sum;
}

struct Descent {
  const Problem& pb;
  bool diagonal;
  Colors means;

  void colors_for(const Vec& a, Colors& u) const {
    if (pb.cfg.pin_colors) {
      u = means;
    } else if (diagonal) {
      solve_colors_diagonal(pb, a, u);
    } else {
      solve_colors_general(pb, a, u);
    }
  }

  Candidate at(const Vec& a, const Colors& warm) const {
    Candidate c;
    c.a = a;
    c.u = warm;
    colors_for(c.a, c.u);
    c.objective = pb.eval(c.a, c.u);
    return c;
  }

  // Gradient of the reduced objective F(a) = min_u G(a, u); by the envelope
  // theorem dF/da = dG/da at u*(a).
  Vec alpha_grad(const Candidate& cur) const {
    Vec ga{};
    Colors gu{};
    pb.grad(cur.a, cur.u, ga, gu);
    return ga;
  }

  // Projected gradient on the simplex with Barzilai-Borwein step lengths and
  // Armijo backtracking. Faces of the simplex are reached exactly, which
  // matters because the sparsity term drives many optima onto them.
  Candidate run(const Vec& a0, const Colors& u0) const {
    const int k = pb.k;
    const UnmixConfig& cfg = pb.cfg;
    Candidate cur = at(a0, u0);
    Vec g = alpha_grad(cur);
    double g_min = g[0], g_max = g[0];
    for (int i = 1; i < k; ++i) {
      g_min = std::min(g_min, g[i]);
      g_max = std::max(g_max, g[i]);
    }
    double t = cfg.step_size / (1.0 + g_max - g_min);
    cur.converged = false;
    for (int it = 0; it < cfg.max_iters; ++it) {
      // Stationarity: projected gradient step of unit length.
      Vec probe{};
      for (int i = 0; i < k; ++i) probe[i] = cur.a[i] - g[i];
      project_simplex(probe, k);
      double pg = 0.0;
      for (int i = 0; i < k; ++i) pg += (probe[i] - cur.a[i]) * (probe[i] - cur.a[i]);
      if (pg <= cfg.convergence_tol) {
        cur.converged = true;
        break;
      }
      bool accepted = false;
      Candidate trial;
      double slope = 0.0;
      for (int tries = 0; tries < 60; ++tries, t *= 0.5) {
        Vec a_new{};
        for (int i = 0; i < k; ++i) a_new[i] = cur.a[i] - t * g[i];
        project_simplex(a_new, k);
        slope = 0.0;
        for (int i = 0; i < k; ++i) slope += g[i] * (a_new[i] - cur.a[i]);
        if (slope >= 0.0) break;
        trial = at(a_new, cur.u);
        if (trial.objective <= cur.objective + 1e-4 * slope) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        // No resolvable descent step remains.
        cur.converged = true;
        break;
      }
      const Vec g_new = alpha_grad(trial);
      double ss = 0.0, sy = 0.0;
      for (int i = 0; i < k; ++i) {
        const double si = trial.a[i] - cur.a[i];
        ss += si * si;
        sy += si * (g_new[i] - g[i]);
      }
      t = sy > 0.0 ? std::clamp(ss / sy, 1e-10, 1e10) : t * 4.0;
      cur = trial;
      g = g_new;
    }
    return cur;
  }
};

}  // namespace

ColorModel::ColorModel(const Rgb& mean, const std::array<double, 9>& covariance)
    : mean_(mean), covariance_(covariance) {
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < r; ++c) {
      if (std::abs(covariance[r * 3 + c] - covariance[c * 3 + r]) > 1e-12) {
        fail(ErrorCode::kInvalidArgument, "color model: covariance is not symmetric");
      }
    }
  }
  const Eigen::Matrix3d cov = Eigen::Map<const Eigen::Matrix<double, 3, 3, Eigen::RowMajor>>(covariance.data());
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  if (!(eig.eigenvalues().minCoeff() >= 1e-6)) {
    fail(ErrorCode::kInvalidArgument, "color model: covariance eigenvalues must be >= 1e-6");
  }
  const Eigen::Matrix3d inv = eig.eigenvectors() * eig.eigenvalues().cwiseInverse().asDiagonal() *
                              eig.eigenvectors().transpose();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) precision_[r * 3 + c] = 0.5 * (inv(r, c) + inv(c, r));
  }
  max_precision_ = 1.0 / eig.eigenvalues().minCoeff();
}

ColorModel ColorModel::isotropic(const Rgb& mean, double variance) {
  return ColorModel(mean, {variance, 0, 0, 0, variance, 0, 0, 0, variance});
}

double ColorModel::distance(const Rgb& u) const {
  const double v[3] = {u[0], u[1], u[2]};
  return mahalanobis(*this, v);
}

std::vector<ColorModel> models_from_palette(const Palette& palette, double variance) {
  palette.validate();
  std::vector<ColorModel> models;
  for (const Rgb& c : palette.colors) models.push_back(ColorModel::isotropic(c, variance));
  return models;
}

void UnmixConfig::validate() const {
  if (!(sparsity_weight >= 0.0) || !(color_constraint_weight >= 0.0) || !(step_size > 0.0) ||
      !(convergence_tol >= 0.0) || max_iters < 1) {
    fail(ErrorCode::kInvalidArgument, "unmix config: weights must be nonnegative and max_iters >= 1");
  }
}

double energy(std::span<const double> alphas, std::span<const Rgb> layer_colors, const std::vector<ColorModel>& models,
              double sigma) {
  const std::size_t k = models.size();
  if (alphas.size() != k || layer_colors.size() != k) {
    fail(ErrorCode::kDimension, "energy: need one alpha and one color per model");
  }
  double e = sigma * sparsity_term(alphas.data(), static_cast<int>(k));
  for (std::size_t i = 0; i < k; ++i) {
    if (alphas[i] != 0.0) e += alphas[i] * models[i].distance(layer_colors[i]);
  }
  return e;
}

PixelUnmixResult unmix_pixel(const Rgb& color, const std::vector<ColorModel>& models, const UnmixConfig& cfg) {
  const int k = static_cast<int>(models.size());
  if (k < 1 || k > kMax) fail(ErrorCode::kInvalidArgument, "unmix: need between 1 and 16 color models");
  cfg.validate();
  Problem pb{models, cfg, {}, k};
  for (int ch = 0; ch < 3; ++ch) pb.c[ch] = std::clamp(static_cast<double>(color[ch]), 0.0, 1.0);

  Colors means{};
  for (int i = 0; i < k; ++i) {
    for (int ch = 0; ch < 3; ++ch) means[i][ch] = models[i].mean()[ch];
  }

  // One-hot candidates: the nearest model is the documented initialization.
  int nearest = 0;
  double nearest_d = std::numeric_limits<double>::infinity();
  for (int i = 0; i < k; ++i) {
    const double d = mahalanobis(models[i], pb.c.data());
    if (d < nearest_d) {
      nearest_d = d;
      nearest = i;
    }
  }
  Candidate best;
  for (int j = 0; j < k; ++j) {
    Candidate cand;
    cand.a[j] = 1.0;
    cand.u = means;
    if (!cfg.pin_colors) cand.u[j] = pb.c;
    cand.objective = pb.eval(cand.a, cand.u);
    // Strictly better only, so ties keep the nearest-model initialization.
    if (j == nearest ? cand.objective <= best.objective : cand.objective < best.objective) best = cand;
  }
  bool diagonal = true;
  for (const ColorModel& m : models) diagonal = diagonal && is_diagonal(m);
  const Descent descent{pb, diagonal, means};
  if (best.objective > 0.0 && k > 1) {
    for (int start = -1; start < k; ++start) {
      if (!cfg.all_vertex_starts && start >= 0 && start != nearest) continue;
      Vec a{};
      Colors u = means;
      if (start < 0) {
        for (int i = 0; i < k; ++i) a[i] = 1.0 / k;
      } else {
        for (int i = 0; i < k; ++i) a[i] = i == start ? 0.9 : 0.1 / (k - 1);
        if (!cfg.pin_colors) u[start] = pb.c;
      }
      Candidate cand = descent.run(a, u);
      if (cand.objective < best.objective) best = cand;
    }
  } else if (k == 1 && !cfg.pin_colors) {
    best = descent.run(best.a, best.u);
  }

  PixelUnmixResult out;
  out.alphas.assign(best.a.begin(), best.a.begin() + k);
  double sum = 0.0;
  for (double& v : out.alphas) {
    v = std::clamp(v, 0.0, 1.0);
    sum += v;
  }
  for (double& v : out.alphas) v /= sum;
  out.layer_colors.resize(k);
  for (int i = 0; i < k; ++i) {
    for (int ch = 0; ch < 3; ++ch) out.layer_colors[i][ch] = static_cast<float>(best.u[i][ch]);
  }
  Vec a{};
  Colors u{};
  for (int i = 0; i < k; ++i) {
    a[i] = out.alphas[i];
    for (int ch = 0; ch < 3; ++ch) u[i][ch] = out.layer_colors[i][ch];
  }
  out.objective = pb.eval(a, u, &out.energy, &out.residual);
  out.converged = best.converged;
  return out;
}

UnmixImageResult unmix_image(const Image& image, const std::vector<ColorModel>& models, const UnmixConfig& cfg) {
  if (image.empty()) fail(ErrorCode::kInvalidArgument, "unmix_image: empty image");
  const int k = static_cast<int>(models.size());
  if (k < 1 || k > kMax) fail(ErrorCode::kInvalidArgument, "unmix: need between 1 and 16 color models");
  cfg.validate();
  UnmixImageResult out;
  LayerStack& stack = out.layers;
  for (const ColorModel& m : models) stack.palette.colors.push_back(m.mean());
  stack.alphas = AlphaStack(k, image.height, image.width);
  stack.alphas.normalized = true;
  stack.colors.assign(static_cast<std::size_t>(k) * 3 * image.pixels(), 0.0f);

  std::vector<std::size_t> failed_rows(image.height, 0);
  std::vector<double> row_energy(image.height, 0.0);
  parallel_for(0, image.height, [&](int y) {
    for (int x = 0; x < image.width; ++x) {
      const std::size_t px = static_cast<std::size_t>(y) * image.width + x;
      const PixelUnmixResult r = unmix_pixel(image.pixel(px), models, cfg);
      for (int i = 0; i < k; ++i) {
        stack.alphas.at(i, px) = static_cast<float>(r.alphas[i]);
        stack.set_color(i, px, r.layer_colors[i]);
      }
      if (!r.converged) ++failed_rows[y];
      row_energy[y] += r.energy;
    }
  });
  for (int y = 0; y < image.height; ++y) {
    out.non_converged += failed_rows[y];
    out.mean_energy += row_energy[y];
  }
  out.mean_energy /= static_cast<double>(image.pixels());
  return out;
}

}  // namespace softseg
