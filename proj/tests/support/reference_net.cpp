#include "reference_net.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace softseg::testing {

namespace {

// Activation tensor: n x c x h x w, row-major.
struct Act {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  Act(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_), v(static_cast<std::size_t>(n_) * c_ * h_ * w_) {}
  double& at(int b, int ch, int y, int x) { return v[((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x]; }
  double at(int b, int ch, int y, int x) const { return v[((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x]; }
};

Act conv(const Act& x, const std::vector<double>& wt, const std::vector<double>& bias, int cout, int stride) {
  const int pad = 1, k = 3;
  const int oh = (x.h + 2 * pad - k) / stride + 1, ow = (x.w + 2 * pad - k) / stride + 1;
  Act y(x.n, cout, oh, ow);
  for (int b = 0; b < x.n; ++b)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double s = bias[co];
          for (int ci = 0; ci < x.c; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                s += x.at(b, ci, iy, ix) * wt[((static_cast<std::size_t>(co) * x.c + ci) * k + ky) * k + kx];
              }
          y.at(b, co, oy, ox) = s;
        }
  return y;
}

// Scatter form of the transposed convolution.
Act deconv(const Act& x, const std::vector<double>& wt, const std::vector<double>& bias, int cout, int stride) {
  const int pad = 1, k = 3;
  Act y(x.n, cout, x.h * stride, x.w * stride);
  for (int b = 0; b < x.n; ++b) {
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < y.h; ++oy)
        for (int ox = 0; ox < y.w; ++ox) y.at(b, co, oy, ox) = bias[co];
    for (int ci = 0; ci < x.c; ++ci)
      for (int iy = 0; iy < x.h; ++iy)
        for (int ix = 0; ix < x.w; ++ix)
          for (int co = 0; co < cout; ++co)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int oy = iy * stride + ky - pad, ox = ix * stride + kx - pad;
                if (oy < 0 || oy >= y.h || ox < 0 || ox >= y.w) continue;
                y.at(b, co, oy, ox) +=
                    x.at(b, ci, iy, ix) * wt[((static_cast<std::size_t>(ci) * cout + co) * k + ky) * k + kx];
              }
  }
  return y;
}

void relu(Act& a) {
  for (double& v : a.v) v = std::max(v, 0.0);
}

void batchnorm(Act& a, const std::vector<double>& gamma, const std::vector<double>& beta, double eps,
               double& min_std) {
  const double count = static_cast<double>(a.n) * a.h * a.w;
  for (int ch = 0; ch < a.c; ++ch) {
    double mean = 0.0, var = 0.0;
    for (int b = 0; b < a.n; ++b)
      for (int y = 0; y < a.h; ++y)
        for (int x = 0; x < a.w; ++x) mean += a.at(b, ch, y, x);
    mean /= count;
    for (int b = 0; b < a.n; ++b)
      for (int y = 0; y < a.h; ++y)
        for (int x = 0; x < a.w; ++x) var += (a.at(b, ch, y, x) - mean) * (a.at(b, ch, y, x) - mean);
    var /= count;
    if (var > 0.0) min_std = std::min(min_std, std::sqrt(var));
    const double istd = 1.0 / std::sqrt(var + eps);
    for (int b = 0; b < a.n; ++b)
      for (int y = 0; y < a.h; ++y)
        for (int x = 0; x < a.w; ++x) a.at(b, ch, y, x) = gamma[ch] * (a.at(b, ch, y, x) - mean) * istd + beta[ch];
  }
}

Act concat(const Act& a, const Act& b) {
  Act y(a.n, a.c + b.c, a.h, a.w);
  for (int n = 0; n < a.n; ++n)
    for (int y0 = 0; y0 < a.h; ++y0)
      for (int x = 0; x < a.w; ++x) {
        for (int c = 0; c < a.c; ++c) y.at(n, c, y0, x) = a.at(n, c, y0, x);
        for (int c = 0; c < b.c; ++c) y.at(n, a.c + c, y0, x) = b.at(n, c, y0, x);
      }
  return y;
}

std::vector<double> to_double(const nn::Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

ReferencePipeline::ReferencePipeline(const ModelWeights& weights, const std::vector<Image>& images,
                                     const std::vector<Palette>& palettes, const LossWeights& loss_weights)
    : n_(static_cast<int>(images.size())),
      h_(images.at(0).height),
      w_(images.at(0).width),
      k_(weights.k),
      loss_weights_(loss_weights) {
  for (const Image& im : images) images_.insert(images_.end(), im.data.begin(), im.data.end());
  for (const Palette& p : palettes) {
    std::vector<double> flat;
    for (const Rgb& c : p.colors) flat.insert(flat.end(), c.begin(), c.end());
    palettes_.push_back(flat);
  }
  auto add_net = [&](Net& net, const UNet& u, const std::string& prefix, bool sigmoid) {
    net.in_channels = u.in_channels();
    net.out_channels = u.out_channels();
    net.sigmoid_head = sigmoid;
    net.layout = u.layers();
    net.first_param = static_cast<int>(params_.size());
    for (int i = 0; i < UNet::kLayerCount; ++i) {
      const std::string base = prefix + UNet::layer_name(i);
      params_.push_back({base + ".weight", to_double(u.layers()[i].weight)});
      params_.push_back({base + ".bias", to_double(u.layers()[i].bias)});
    }
  };
  add_net(alpha_, weights.alpha, "alpha.", true);
  add_net(residue_, weights.residue, "residue.", false);
}

std::vector<double> ReferencePipeline::run_net(const Net& net, const std::vector<double>& input, int channels) const {
  Act x(n_, channels, h_, w_);
  x.v = input;
  auto weight = [&](int layer) -> const std::vector<double>& { return params_[net.first_param + 2 * layer].values; };
  auto bias = [&](int layer) -> const std::vector<double>& { return params_[net.first_param + 2 * layer + 1].values; };
  auto block = [&](const Act& in, int layer, bool transposed) {
    const nn::LayerParams& p = net.layout[layer];
    Act a = transposed ? deconv(in, weight(layer), bias(layer), p.out_channels(), p.stride)
                       : conv(in, weight(layer), bias(layer), p.out_channels(), p.stride);
    relu(a);
    batchnorm(a, weight(layer + 1), bias(layer + 1), net.layout[layer + 1].bn_eps, min_bn_std_);
    return a;
  };
  Act rgb(n_, 3, h_, w_);
  for (int b = 0; b < n_; ++b)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h_; ++y)
        for (int xx = 0; xx < w_; ++xx) rgb.at(b, c, y, xx) = x.at(b, c, y, xx);

  const Act c1 = block(x, UNet::kConv1, false);
  const Act c2 = block(c1, UNet::kConv2, false);
  const Act c3 = block(c2, UNet::kConv3, false);
  const Act d1 = block(c3, UNet::kDeconv1, true);
  const Act d2 = block(concat(d1, c2), UNet::kDeconv2, true);
  const Act d3 = block(concat(d2, c1), UNet::kDeconv3, true);
  const Act e = block(concat(d3, rgb), UNet::kConv4, false);
  Act y = conv(e, weight(UNet::kHead), bias(UNet::kHead), net.out_channels, 1);
  for (double& v : y.v) v = net.sigmoid_head ? 1.0 / (1.0 + std::exp(-v)) : std::tanh(v);
  return y.v;
}

double ReferencePipeline::loss() const {
  min_bn_std_ = std::numeric_limits<double>::infinity();
  const std::size_t plane = static_cast<std::size_t>(h_) * w_;
  auto img = [&](int b, int c, std::size_t px) { return images_[(static_cast<std::size_t>(b) * 3 + c) * plane + px]; };

  std::vector<double> alpha_in(static_cast<std::size_t>(n_) * (3 + 3 * k_) * plane);
  for (int b = 0; b < n_; ++b)
    for (int c = 0; c < 3 + 3 * k_; ++c)
      for (std::size_t px = 0; px < plane; ++px)
        alpha_in[(static_cast<std::size_t>(b) * (3 + 3 * k_) + c) * plane + px] =
            c < 3 ? img(b, c, px) : palettes_[b][c - 3];
  const std::vector<double> raw = run_net(alpha_, alpha_in, 3 + 3 * k_);

  std::vector<double> alphas(raw.size());
  for (int b = 0; b < n_; ++b)
    for (std::size_t px = 0; px < plane; ++px) {
      double s = 1e-8;
      for (int i = 0; i < k_; ++i) s += raw[(static_cast<std::size_t>(b) * k_ + i) * plane + px];
      for (int i = 0; i < k_; ++i) {
        const std::size_t at = (static_cast<std::size_t>(b) * k_ + i) * plane + px;
        alphas[at] = raw[at] / s;
      }
    }

  const int rc = 3 + 4 * k_;
  std::vector<double> residue_in(static_cast<std::size_t>(n_) * rc * plane);
  for (int b = 0; b < n_; ++b)
    for (int c = 0; c < rc; ++c)
      for (std::size_t px = 0; px < plane; ++px) {
        double v;
        if (c < 3) {
          v = img(b, c, px);
        } else {
          const int i = (c - 3) / 4, j = (c - 3) % 4;
          v = j < 3 ? palettes_[b][3 * i + j] : alphas[(static_cast<std::size_t>(b) * k_ + i) * plane + px];
        }
        residue_in[(static_cast<std::size_t>(b) * rc + c) * plane + px] = v;
      }
  const std::vector<double> residues = run_net(residue_, residue_in, rc);

  double sum_r = 0.0, sum_a = 0.0, sum_d = 0.0;
  for (int b = 0; b < n_; ++b)
    for (std::size_t px = 0; px < plane; ++px) {
      for (int c = 0; c < 3; ++c) {
        double comp = 0.0, comp_p = 0.0;
        for (int i = 0; i < k_; ++i) {
          const double a = alphas[(static_cast<std::size_t>(b) * k_ + i) * plane + px];
          const double p = palettes_[b][3 * i + c];
          const double u = std::clamp(p + residues[(static_cast<std::size_t>(b) * 3 * k_ + 3 * i + c) * plane + px], 0.0, 1.0);
          comp += a * u;
          comp_p += a * p;
        }
        sum_r += std::abs(comp - img(b, c, px));
        sum_a += std::abs(comp_p - img(b, c, px));
      }
      for (int i = 0; i < k_; ++i) {
        double d2 = 0.0;
        for (int c = 0; c < 3; ++c) {
          const double p = palettes_[b][3 * i + c];
          const double u = std::clamp(p + residues[(static_cast<std::size_t>(b) * 3 * k_ + 3 * i + c) * plane + px], 0.0, 1.0);
          d2 += (u - p) * (u - p);
        }
        sum_d += alphas[(static_cast<std::size_t>(b) * k_ + i) * plane + px] * std::sqrt(d2);
      }
    }
  const double pixels = static_cast<double>(n_) * plane;
  return sum_r / (3 * pixels) + loss_weights_.lambda_a * sum_a / (3 * pixels) + loss_weights_.lambda_d * sum_d / pixels;
}

}  // namespace softseg::testing
