#include "softseg/metrics.hpp"

#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "softseg/error.hpp"
#include "softseg/layer_ops.hpp"

namespace softseg {
namespace {

constexpr double kPsnrCap = 100.0;
constexpr int kWindow = 11;
constexpr double kSigma = 1.5;

void check_same(const Image& a, const Image& b, const char* what) {
  if (a.height != b.height || a.width != b.width || a.data.size() != b.data.size()) {
    fail(ErrorCode::kDimension, std::string(what) + ": images differ in size (" + std::to_string(a.width) + "x" +
                                    std::to_string(a.height) + " vs " + std::to_string(b.width) + "x" +
                                    std::to_string(b.height) + ")");
  }
}

std::vector<double> gray(const Image& im) {
  std::vector<double> g(im.pixels());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = (static_cast<double>(im.plane(0)[i]) + im.plane(1)[i] + im.plane(2)[i]) / 3.0;
  }
  return g;
}

// Separable valid-mode filtering with the normalized Gaussian window.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& kernel) {
  const int oh = h - kWindow + 1, ow = w - kWindow + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += kernel[k] * src[static_cast<std::size_t>(y) * w + x + k];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWindow; ++k) s += kernel[k] * tmp[static_cast<std::size_t>(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

}  // namespace

double reconstruction_mse(const Image& original, const Image& reconstructed) {
  check_same(original, reconstructed, "reconstruction_mse");
  if (original.empty()) fail(ErrorCode::kInvalidArgument, "reconstruction_mse: empty image");
  double s = 0.0;
  for (std::size_t i = 0; i < original.data.size(); ++i) {
    const double d = static_cast<double>(original.data[i]) - reconstructed.data[i];
    s += d * d;
  }
  return s / static_cast<double>(original.data.size());
}

double psnr_from_mse(double mse) {
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double psnr(const Image& original, const Image& reconstructed) {
  return psnr_from_mse(reconstruction_mse(original, reconstructed));
}

double ssim(const Image& original, const Image& reconstructed) {
  check_same(original, reconstructed, "ssim");
  const int h = original.height, w = original.width;
  if (h < kWindow || w < kWindow) {
    fail(ErrorCode::kInvalidArgument, "ssim: image " + std::to_string(w) + "x" + std::to_string(h) +
                                          " is smaller than the 11x11 window");
  }
  std::vector<double> kernel(kWindow);
  double ksum = 0.0;
  for (int k = 0; k < kWindow; ++k) {
    const double d = k - kWindow / 2;
    kernel[k] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    ksum += kernel[k];
  }
  for (double& v : kernel) v /= ksum;

  const std::vector<double> x = gray(original), y = gray(reconstructed);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, kernel), my = filter_valid(y, h, w, kernel);
  const auto sxx = filter_valid(xx, h, w, kernel), syy = filter_valid(yy, h, w, kernel);
  const auto sxy = filter_valid(xy, h, w, kernel);
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

double sparsity_score(const AlphaStack& alphas) {
  if (alphas.pixels() == 0) fail(ErrorCode::kInvalidArgument, "sparsity_score: empty stack");
  double total = 0.0;
  for (std::size_t px = 0; px < alphas.pixels(); ++px) {
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < alphas.k; ++i) {
      const double a = alphas.at(i, px);
      s1 += a;
      s2 += a * a;
    }
    if (s2 > 0.0) total += s1 / s2 - 1.0;
  }
  return total / static_cast<double>(alphas.pixels());
}

double color_variance(const LayerStack& stack, double threshold) {
  stack.validate_shape();
  if (stack.k() == 0) fail(ErrorCode::kInvalidArgument, "color_variance: empty stack");
  double total = 0.0;
  for (int i = 0; i < stack.k(); ++i) {
    const float* a = stack.alphas.layer(i);
    for (int c = 0; c < 3; ++c) {
      const float* u = stack.color_plane(i, c);
      double n = 0.0, mean = 0.0, m2 = 0.0;
      for (std::size_t px = 0; px < stack.pixels(); ++px) {
        if (!(a[px] > threshold)) continue;
        // Welford update.
        n += 1.0;
        const double d = u[px] - mean;
        mean += d / n;
        m2 += d * (u[px] - mean);
      }
      if (n > 0.0) total += m2 / n;
    }
  }
  return total / stack.k();
}

ImageReport evaluate_layers(const Image& original, const LayerStack& layers, const std::string& name) {
  const Image composite = compose(layers);
  ImageReport r;
  r.name = name;
  r.reconstruction_mse = reconstruction_mse(original, composite);
  r.psnr = psnr_from_mse(r.reconstruction_mse);
  r.ssim = ssim(original, composite);
  r.sparsity = sparsity_score(layers.alphas);
  r.color_variance = color_variance(layers);
  return r;
}

EvalReport summarize(std::vector<ImageReport> reports) {
  EvalReport out;
  if (reports.empty()) return out;
  for (const ImageReport& r : reports) {
    out.reconstruction_mse += r.reconstruction_mse;
    out.psnr += r.psnr;
    out.ssim += r.ssim;
    out.sparsity += r.sparsity;
    out.color_variance += r.color_variance;
  }
  const double n = static_cast<double>(reports.size());
  out.reconstruction_mse /= n;
  out.psnr /= n;
  out.ssim /= n;
  out.sparsity /= n;
  out.color_variance /= n;
  out.per_image = std::move(reports);
  return out;
}

std::string EvalReport::to_json() const {
  auto scores = [](const auto& r) {
    return nlohmann::json{{"reconstruction_mse", r.reconstruction_mse},
                          {"psnr", r.psnr},
                          {"ssim", r.ssim},
                          {"sparsity", r.sparsity},
                          {"color_variance", r.color_variance}};
  };
  nlohmann::json j = scores(*this);
  j["per_image"] = nlohmann::json::array();
  for (const ImageReport& r : per_image) {
    nlohmann::json e = scores(r);
    e["name"] = r.name;
    j["per_image"].push_back(e);
  }
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::string out;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %12s %9s %8s %9s %10s\n", "image", "mse", "psnr", "ssim", "sparsity",
                "color_var");
  out += line;
  auto row = [&](const std::string& name, const auto& r) {
    std::snprintf(line, sizeof line, "%-24s %12.6g %9.3f %8.4f %9.4f %10.6f\n", name.c_str(), r.reconstruction_mse,
                  r.psnr, r.ssim, r.sparsity, r.color_variance);
    out += line;
  };
  for (const ImageReport& r : per_image) row(r.name.empty() ? "-" : r.name, r);
  if (per_image.size() != 1) row("mean", *this);
  return out;
}

}  // namespace softseg
