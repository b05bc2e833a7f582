#include "softseg/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "softseg/error.hpp"
#include "softseg/parallel.hpp"

namespace softseg::nn {
namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const MatRM>;
using StridedMap = Eigen::Map<MatRM, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const MatRM, 0, Eigen::OuterStride<>>;

// Upper bound on the im2col scratch size (floats) per chunk of output rows.
constexpr std::size_t kColBudget = std::size_t{1} << 18;

struct ConvGeometry {
  int channels;  // channels of the "wide" side (conv input)
  int height, width;
  int out_h, out_w;
  int kernel, pad, stride;
};

int rows_per_chunk(const ConvGeometry& g) {
  const std::size_t per_row = static_cast<std::size_t>(g.channels) * g.kernel * g.kernel * g.out_w;
  return static_cast<int>(std::clamp<std::size_t>(kColBudget / std::max<std::size_t>(per_row, 1), 1,
                                                  static_cast<std::size_t>(g.out_h)));
}

// Output columns [lo, hi) whose input column ox*s + kx - p lies inside [0, w).
void valid_columns(const ConvGeometry& g, int kx, int& lo, int& hi) {
  const int off = kx - g.pad;
  lo = off >= 0 ? 0 : (-off + g.stride - 1) / g.stride;
  hi = (g.width - 1 - off) >= 0 ? std::min(g.out_w, (g.width - 1 - off) / g.stride + 1) : 0;
  hi = std::max(hi, lo);
}

// col[(c*k + ky)*k + kx, (oy - oy0) * out_w + ox] = in[c, oy*s + ky - p, ox*s + kx - p]
void im2col(const float* in, const ConvGeometry& g, int oy0, int oy1, float* col) {
  const int cols = (oy1 - oy0) * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    const float* plane = in + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        float* dst = col + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * cols;
        int lo, hi;
        valid_columns(g, kx, lo, hi);
        const int off = kx - g.pad;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          float* row = dst + static_cast<std::size_t>(oy - oy0) * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(row, row + g.out_w, 0.0f);
            continue;
          }
          const float* src = plane + static_cast<std::size_t>(iy) * g.width + off;
          std::fill(row, row + lo, 0.0f);
          if (g.stride == 1) {
            std::copy(src + lo, src + hi, row + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) row[ox] = src[ox * g.stride];
          }
          std::fill(row + hi, row + g.out_w, 0.0f);
        }
      }
    }
  }
}

// Adjoint of im2col: out[c, iy, ix] += col[...].
void col2im(const float* col, const ConvGeometry& g, int oy0, int oy1, float* out) {
  const int cols = (oy1 - oy0) * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    float* plane = out + static_cast<std::size_t>(c) * g.height * g.width;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const float* src = col + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * cols;
        int lo, hi;
        valid_columns(g, kx, lo, hi);
        const int off = kx - g.pad;
        for (int oy = oy0; oy < oy1; ++oy) {
          const int iy = oy * g.stride + ky - g.pad;
          if (iy < 0 || iy >= g.height) continue;
          const float* row = src + static_cast<std::size_t>(oy - oy0) * g.out_w;
          float* dst = plane + static_cast<std::size_t>(iy) * g.width + off;
          if (g.stride == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] += row[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * g.stride] += row[ox];
          }
        }
      }
    }
  }
}

void check_kernel_params(const LayerParams& p, LayerKind kind, const char* what) {
  if (p.kind != kind) fail(ErrorCode::kInvalidArgument, std::string(what) + ": wrong layer kind");
  if (p.stride < 1) fail(ErrorCode::kInvalidArgument, std::string(what) + ": stride must be >= 1");
  require_rank(p.weight, 4, what);
  if (p.weight.dim(2) != p.kernel_size || p.weight.dim(3) != p.kernel_size) {
    fail(ErrorCode::kDimension, std::string(what) + ": kernel shape " +
                                    shape_string(p.weight.shape()) + " disagrees with kernel_size");
  }
}

// Geometry of the conv whose input is the wide tensor [C, H, W].
ConvGeometry conv_geometry(int channels, int height, int width, const LayerParams& p) {
  ConvGeometry g{channels, height, width, 0, 0, p.kernel_size, p.padding, p.stride};
  g.out_h = (height + 2 * p.padding - p.kernel_size) / p.stride + 1;
  g.out_w = (width + 2 * p.padding - p.kernel_size) / p.stride + 1;
  return g;
}

void add_bias(float* out, int channels, std::size_t plane, const Tensor& bias) {
  for (int c = 0; c < channels; ++c) {
    const float b = bias[c];
    float* dst = out + c * plane;
    for (std::size_t i = 0; i < plane; ++i) dst[i] += b;
  }
}

void accumulate_bias_grad(const Tensor& dy, Tensor& db) {
  const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  for (int c = 0; c < dy.dim(1); ++c) {
    double acc = 0.0;
    for (int n = 0; n < dy.dim(0); ++n) {
      const float* src = dy.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) acc += src[i];
    }
    db[c] += static_cast<float>(acc);
  }
}

// Sums per-sample weight gradients in a fixed order so the result does not
// depend on the worker count.
void reduce_weight_grads(const std::vector<Tensor>& per_sample, Tensor& dw) {
  for (const Tensor& g : per_sample) add_inplace(dw, g);
}

}  // namespace

LayerParams LayerParams::conv(int in_channels, int out_channels, int stride) {
  LayerParams p;
  p.kind = LayerKind::kConv;
  p.stride = stride;
  p.weight = Tensor({out_channels, in_channels, 3, 3});
  p.bias = Tensor({out_channels});
  return p;
}

LayerParams LayerParams::deconv(int in_channels, int out_channels, int stride) {
  LayerParams p;
  p.kind = LayerKind::kDeconv;
  p.stride = stride;
  p.weight = Tensor({in_channels, out_channels, 3, 3});
  p.bias = Tensor({out_channels});
  return p;
}

LayerParams LayerParams::batchnorm(int channels) {
  LayerParams p;
  p.kind = LayerKind::kBatchNorm;
  p.stride = 1;
  p.padding = 0;
  p.kernel_size = 1;
  p.weight = Tensor({channels}, 1.0f);
  p.bias = Tensor({channels});
  p.running_mean = Tensor({channels});
  p.running_var = Tensor({channels}, 1.0f);
  return p;
}

int LayerParams::in_channels() const {
  switch (kind) {
    case LayerKind::kConv: return weight.dim(1);
    case LayerKind::kDeconv: return weight.dim(0);
    case LayerKind::kBatchNorm: return weight.dim(0);
  }
  return 0;
}

int LayerParams::out_channels() const {
  switch (kind) {
    case LayerKind::kConv: return weight.dim(0);
    case LayerKind::kDeconv: return weight.dim(1);
    case LayerKind::kBatchNorm: return weight.dim(0);
  }
  return 0;
}

LayerGrads LayerGrads::zeros_like(const LayerParams& p) {
  return LayerGrads{Tensor(p.weight.shape()), Tensor(p.bias.shape())};
}

void init_layer(LayerParams& p, std::uint64_t seed) {
  if (p.kind == LayerKind::kBatchNorm) {
    p.weight.fill(1.0f);
    p.bias.fill(0.0f);
    p.running_mean.fill(0.0f);
    p.running_var.fill(1.0f);
    return;
  }
  // Fan-in counts the taps feeding one output value.
  const int fan_in = (p.kind == LayerKind::kConv ? p.weight.dim(1) : p.weight.dim(0)) * p.kernel_size *
                     p.kernel_size / (p.kind == LayerKind::kDeconv ? p.stride * p.stride : 1);
  const float stddev = std::sqrt(2.0f / static_cast<float>(std::max(fan_in, 1)));
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, stddev);
  for (float& w : p.weight.data()) w = dist(rng);
  p.bias.fill(0.0f);
}

Tensor conv2d(const Tensor& x, const LayerParams& p) {
  check_kernel_params(p, LayerKind::kConv, "conv2d");
  require_rank(x, 4, "conv2d");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = p.weight.dim(0);
  if (p.weight.dim(1) != cin) {
    fail(ErrorCode::kDimension, "conv2d: input has " + std::to_string(cin) + " channels, kernel expects " +
                                    std::to_string(p.weight.dim(1)));
  }
  if (h % p.stride != 0 || w % p.stride != 0) {
    fail(ErrorCode::kDimension, "conv2d: spatial size " + std::to_string(h) + "x" + std::to_string(w) +
                                    " not divisible by stride " + std::to_string(p.stride));
  }
  const ConvGeometry g = conv_geometry(cin, h, w, p);
  Tensor y({n, cout, g.out_h, g.out_w});
  const int chunk = rows_per_chunk(g);
  const int chunks = (g.out_h + chunk - 1) / chunk;
  const std::size_t out_plane = static_cast<std::size_t>(g.out_h) * g.out_w;
  ConstMap weight(p.weight.raw(), cout, cin * 9);

  parallel_for(0, n * chunks, [&](int job) {
    const int b = job / chunks;
    const int oy0 = (job % chunks) * chunk;
    const int oy1 = std::min(g.out_h, oy0 + chunk);
    const int cols = (oy1 - oy0) * g.out_w;
    std::vector<float> col(static_cast<std::size_t>(cin) * 9 * cols);
    im2col(x.plane(b, 0), g, oy0, oy1, col.data());
    StridedMap out(y.plane(b, 0) + static_cast<std::size_t>(oy0) * g.out_w, cout, cols,
                   Eigen::OuterStride<>(static_cast<Eigen::Index>(out_plane)));
    out.noalias() = weight * ConstMap(col.data(), cin * 9, cols);
    for (int c = 0; c < cout; ++c) out.row(c).array() += p.bias[c];
  });
  return y;
}

Tensor conv2d_backward(const Tensor& x, const LayerParams& p, const Tensor& dy, LayerGrads* grads) {
  check_kernel_params(p, LayerKind::kConv, "conv2d_backward");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = p.weight.dim(0);
  const ConvGeometry g = conv_geometry(cin, h, w, p);
  if (dy.rank() != 4 || dy.dim(0) != n || dy.dim(1) != cout || dy.dim(2) != g.out_h || dy.dim(3) != g.out_w) {
    fail(ErrorCode::kDimension, "conv2d_backward: gradient shape " + shape_string(dy.shape()));
  }
  Tensor dx(x.shape());
  const int chunk = rows_per_chunk(g);
  const std::size_t out_plane = static_cast<std::size_t>(g.out_h) * g.out_w;
  ConstMap weight(p.weight.raw(), cout, cin * 9);
  std::vector<Tensor> dw_per_sample(grads ? n : 0);

  parallel_for(0, n, [&](int b) {
    Tensor* dw = grads ? &(dw_per_sample[b] = Tensor(p.weight.shape())) : nullptr;
    std::vector<float> col;
    std::vector<float> dcol;
    for (int oy0 = 0; oy0 < g.out_h; oy0 += chunk) {
      const int oy1 = std::min(g.out_h, oy0 + chunk);
      const int cols = (oy1 - oy0) * g.out_w;
      ConstStridedMap dout(dy.plane(b, 0) + static_cast<std::size_t>(oy0) * g.out_w, cout, cols,
                           Eigen::OuterStride<>(static_cast<Eigen::Index>(out_plane)));
      if (dw) {
        col.resize(static_cast<std::size_t>(cin) * 9 * cols);
        im2col(x.plane(b, 0), g, oy0, oy1, col.data());
        Eigen::Map<MatRM> dwm(dw->raw(), cout, cin * 9);
        dwm.noalias() += dout * ConstMap(col.data(), cin * 9, cols).transpose();
      }
      dcol.resize(static_cast<std::size_t>(cin) * 9 * cols);
      Eigen::Map<MatRM>(dcol.data(), cin * 9, cols).noalias() = weight.transpose() * dout;
      col2im(dcol.data(), g, oy0, oy1, dx.plane(b, 0));
    }
  });

  if (grads) {
    reduce_weight_grads(dw_per_sample, grads->weight);
    accumulate_bias_grad(dy, grads->bias);
  }
  return dx;
}

Tensor deconv2d(const Tensor& x, const LayerParams& p) {
  check_kernel_params(p, LayerKind::kDeconv, "deconv2d");
  require_rank(x, 4, "deconv2d");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = p.weight.dim(1);
  if (p.weight.dim(0) != cin) {
    fail(ErrorCode::kDimension, "deconv2d: input has " + std::to_string(cin) + " channels, kernel expects " +
                                    std::to_string(p.weight.dim(0)));
  }
  const int out_h = h * p.stride, out_w = w * p.stride;
  // The adjoint conv maps [cout, out_h, out_w] -> [cin, h, w].
  const ConvGeometry g = conv_geometry(cout, out_h, out_w, p);
  if (g.out_h != h || g.out_w != w) {
    fail(ErrorCode::kDimension, "deconv2d: kernel/padding/stride combination has no exact adjoint");
  }
  Tensor y({n, cout, out_h, out_w});
  const int chunk = rows_per_chunk(g);
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  ConstMap weight(p.weight.raw(), cin, cout * 9);

  parallel_for(0, n, [&](int b) {
    std::vector<float> dcol;
    for (int oy0 = 0; oy0 < h; oy0 += chunk) {
      const int oy1 = std::min(h, oy0 + chunk);
      const int cols = (oy1 - oy0) * w;
      ConstStridedMap in(x.plane(b, 0) + static_cast<std::size_t>(oy0) * w, cin, cols,
                         Eigen::OuterStride<>(static_cast<Eigen::Index>(in_plane)));
      dcol.resize(static_cast<std::size_t>(cout) * 9 * cols);
      Eigen::Map<MatRM>(dcol.data(), cout * 9, cols).noalias() = weight.transpose() * in;
      col2im(dcol.data(), g, oy0, oy1, y.plane(b, 0));
    }
    add_bias(y.plane(b, 0), cout, static_cast<std::size_t>(out_h) * out_w, p.bias);
  });
  return y;
}

Tensor deconv2d_backward(const Tensor& x, const LayerParams& p, const Tensor& dy, LayerGrads* grads) {
  check_kernel_params(p, LayerKind::kDeconv, "deconv2d_backward");
  const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int cout = p.weight.dim(1);
  const int out_h = h * p.stride, out_w = w * p.stride;
  if (dy.rank() != 4 || dy.dim(0) != n || dy.dim(1) != cout || dy.dim(2) != out_h || dy.dim(3) != out_w) {
    fail(ErrorCode::kDimension, "deconv2d_backward: gradient shape " + shape_string(dy.shape()));
  }
  const ConvGeometry g = conv_geometry(cout, out_h, out_w, p);
  Tensor dx(x.shape());
  const int chunk = rows_per_chunk(g);
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  ConstMap weight(p.weight.raw(), cin, cout * 9);
  std::vector<Tensor> dw_per_sample(grads ? n : 0);

  parallel_for(0, n, [&](int b) {
    Tensor* dw = grads ? &(dw_per_sample[b] = Tensor(p.weight.shape())) : nullptr;
    std::vector<float> col;
    for (int oy0 = 0; oy0 < h; oy0 += chunk) {
      const int oy1 = std::min(h, oy0 + chunk);
      const int cols = (oy1 - oy0) * w;
      col.resize(static_cast<std::size_t>(cout) * 9 * cols);
      im2col(dy.plane(b, 0), g, oy0, oy1, col.data());
      ConstMap colm(col.data(), cout * 9, cols);
      StridedMap din(dx.plane(b, 0) + static_cast<std::size_t>(oy0) * w, cin, cols,
                     Eigen::OuterStride<>(static_cast<Eigen::Index>(in_plane)));
      din.noalias() = weight * colm;
      if (dw) {
        ConstStridedMap in(x.plane(b, 0) + static_cast<std::size_t>(oy0) * w, cin, cols,
                           Eigen::OuterStride<>(static_cast<Eigen::Index>(in_plane)));
        Eigen::Map<MatRM>(dw->raw(), cin, cout * 9).noalias() += in * colm.transpose();
      }
    }
  });

  if (grads) {
    reduce_weight_grads(dw_per_sample, grads->weight);
    accumulate_bias_grad(dy, grads->bias);
  }
  return dx;
}

namespace {

// Sum of v[i] (or of (v[i] - center)^2) in float blocks folded into a double.
// Reductions use a fixed lane layout so the summation order never depends on
// the buffer's address (Eigen's reductions peel to the first aligned element).
constexpr std::size_t kLanes = 16;

double block_sum(const float* v, std::size_t size, float center, bool squared) {
  constexpr std::size_t kBlock = 1024;
  double total = 0.0;
  for (std::size_t i = 0; i < size; i += kBlock) {
    const std::size_t end = std::min(size, i + kBlock);
    float lanes[kLanes] = {};
    std::size_t j = i;
    for (; j + kLanes <= end; j += kLanes) {
      for (std::size_t l = 0; l < kLanes; ++l) {
        const float d = v[j + l] - center;
        lanes[l] += squared ? d * d : v[j + l];
      }
    }
    for (; j < end; ++j) {
      const float d = v[j] - center;
      lanes[0] += squared ? d * d : v[j];
    }
    for (float l : lanes) total += l;
  }
  return total;
}

double block_dot(const float* a, const float* b, std::size_t size) {
  constexpr std::size_t kBlock = 1024;
  double total = 0.0;
  for (std::size_t i = 0; i < size; i += kBlock) {
    const std::size_t end = std::min(size, i + kBlock);
    float lanes[kLanes] = {};
    std::size_t j = i;
    for (; j + kLanes <= end; j += kLanes) {
      for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += a[j + l] * b[j + l];
    }
    for (; j < end; ++j) lanes[0] += a[j] * b[j];
    for (float l : lanes) total += l;
  }
  return total;
}

Tensor batchnorm_impl(const Tensor& x, const LayerParams& p, BnMode mode, BatchNormCache* cache,
                      LayerParams* running) {
  if (p.kind != LayerKind::kBatchNorm) fail(ErrorCode::kInvalidArgument, "batchnorm: wrong layer kind");
  require_rank(x, 4, "batchnorm");
  const int n = x.dim(0), channels = x.dim(1);
  if (p.weight.numel() != static_cast<std::size_t>(channels)) {
    fail(ErrorCode::kDimension, "batchnorm: input has " + std::to_string(channels) + " channels, layer has " +
                                    std::to_string(p.weight.numel()));
  }
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  const std::size_t count = plane * n;
  if (mode == BnMode::kTrain && count < 2) {
    fail(ErrorCode::kInvalidArgument, "batchnorm: train mode needs at least 2 values per channel");
  }

  Tensor y(x.shape());
  Tensor xhat(x.shape());
  std::vector<float> inv_std(channels);
  parallel_for(0, channels, [&](int c) {
    float mean = p.running_mean[c];
    float var = p.running_var[c];
    if (mode == BnMode::kTrain) {
      double sum = 0.0;
      for (int b = 0; b < n; ++b) sum += block_sum(x.plane(b, c), plane, 0.0f, false);
      const double m = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int b = 0; b < n; ++b) sq += block_sum(x.plane(b, c), plane, static_cast<float>(m), true);
      const double v = sq / static_cast<double>(count);
      mean = static_cast<float>(m);
      var = static_cast<float>(v);
      if (running) {
        const double unbiased = sq / static_cast<double>(count - 1);
        running->running_mean[c] = (1.0f - p.bn_momentum) * p.running_mean[c] + p.bn_momentum * mean;
        running->running_var[c] =
            static_cast<float>((1.0 - p.bn_momentum) * p.running_var[c] + p.bn_momentum * unbiased);
      }
    }
    const float istd = 1.0f / std::sqrt(var + p.bn_eps);
    inv_std[c] = istd;
    const float gamma = p.weight[c], beta = p.bias[c];
    for (int b = 0; b < n; ++b) {
      const float* src = x.plane(b, c);
      float* xh = xhat.plane(b, c);
      float* dst = y.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = (src[i] - mean) * istd;
        dst[i] = gamma * xh[i] + beta;
      }
    }
  });
  if (cache) {
    cache->mode = mode;
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

}  // namespace

Tensor batchnorm(const Tensor& x, LayerParams& p, BnMode mode, BatchNormCache* cache) {
  return batchnorm_impl(x, p, mode, cache, &p);
}

Tensor batchnorm_stateless(const Tensor& x, const LayerParams& p, BnMode mode, BatchNormCache* cache) {
  return batchnorm_impl(x, p, mode, cache, nullptr);
}

Tensor batchnorm_eval(const Tensor& x, const LayerParams& p) {
  require_rank(x, 4, "batchnorm");
  const int n = x.dim(0), channels = x.dim(1);
  if (p.weight.numel() != static_cast<std::size_t>(channels)) {
    fail(ErrorCode::kDimension, "batchnorm: input has " + std::to_string(channels) + " channels, layer has " +
                                    std::to_string(p.weight.numel()));
  }
  const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * x.dim(3);
  Tensor y(x.shape());
  parallel_for(0, channels, [&](int c) {
    const float istd = 1.0f / std::sqrt(p.running_var[c] + p.bn_eps);
    const float scale = p.weight[c] * istd;
    const float shift = p.bias[c] - p.running_mean[c] * scale;
    for (int b = 0; b < n; ++b) {
      const float* src = x.plane(b, c);
      float* dst = y.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] * scale + shift;
    }
  });
  return y;
}

Tensor batchnorm_backward(const BatchNormCache& cache, const LayerParams& p, const Tensor& dy,
                          LayerGrads* grads) {
  require_same_shape(cache.xhat, dy, "batchnorm_backward");
  const int n = dy.dim(0), channels = dy.dim(1);
  const std::size_t plane = static_cast<std::size_t>(dy.dim(2)) * dy.dim(3);
  const double count = static_cast<double>(plane * n);
  Tensor dx(dy.shape());
  parallel_for(0, channels, [&](int c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b = 0; b < n; ++b) {
      const float* g = dy.plane(b, c);
      const float* xh = cache.xhat.plane(b, c);
      sum_dy += block_sum(g, plane, 0.0f, false);
      sum_dy_xhat += block_dot(g, xh, plane);
    }
    if (grads) {
      grads->weight[c] += static_cast<float>(sum_dy_xhat);
      grads->bias[c] += static_cast<float>(sum_dy);
    }
    const float gamma = p.weight[c];
    const float istd = cache.inv_std[c];
    if (cache.mode == BnMode::kEval) {
      for (int b = 0; b < n; ++b) {
        const float* g = dy.plane(b, c);
        float* dst = dx.plane(b, c);
        for (std::size_t i = 0; i < plane; ++i) dst[i] = g[i] * gamma * istd;
      }
      return;
    }
    const float mean_dy = static_cast<float>(sum_dy / count);
    const float mean_dy_xhat = static_cast<float>(sum_dy_xhat / count);
    for (int b = 0; b < n; ++b) {
      const float* g = dy.plane(b, c);
      const float* xh = cache.xhat.plane(b, c);
      float* dst = dx.plane(b, c);
      for (std::size_t i = 0; i < plane; ++i) {
        dst[i] = gamma * istd * (g[i] - mean_dy - xh[i] * mean_dy_xhat);
      }
    }
  });
  return dx;
}

namespace {

// Largest float below 1; keeps sigmoid/tanh heads strictly inside their
// open ranges after float rounding.
constexpr float kBelowOne = 1.0f - 5.9604645e-8f;

float sigmoid(float v) {
  const float s = 1.0f / (1.0f + std::exp(-v));
  return std::clamp(s, std::numeric_limits<float>::min(), kBelowOne);
}

}  // namespace

void activate_inplace(Tensor& x, Activation kind) {
  float* d = x.raw();
  const std::size_t count = x.numel();
  switch (kind) {
    case Activation::kRelu:
      for (std::size_t i = 0; i < count; ++i) d[i] = d[i] > 0.0f ? d[i] : 0.0f;
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < count; ++i) d[i] = sigmoid(d[i]);
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < count; ++i) d[i] = std::clamp(std::tanh(d[i]), -kBelowOne, kBelowOne);
      break;
  }
}

Tensor activate(const Tensor& x, Activation kind) {
  Tensor y = x;
  activate_inplace(y, kind);
  return y;
}

Tensor activate_backward(const Tensor& y, const Tensor& dy, Activation kind) {
  require_same_shape(y, dy, "activate_backward");
  Tensor dx(y.shape());
  const float* out = y.raw();
  const float* g = dy.raw();
  float* d = dx.raw();
  const std::size_t count = y.numel();
  switch (kind) {
    case Activation::kRelu:
      for (std::size_t i = 0; i < count; ++i) d[i] = out[i] > 0.0f ? g[i] : 0.0f;
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < count; ++i) d[i] = g[i] * out[i] * (1.0f - out[i]);
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < count; ++i) d[i] = g[i] * (1.0f - out[i] * out[i]);
      break;
  }
  return dx;
}

}  // namespace softseg::nn
