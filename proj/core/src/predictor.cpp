#include "softseg/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "softseg/error.hpp"
#include "softseg/log.hpp"

namespace softseg {

using nn::Activation;
using nn::BnMode;
using nn::LayerParams;
using nn::Tensor;

namespace {

constexpr int kHidden = 7;
constexpr int kBnLayer[kHidden] = {UNet::kBn1, UNet::kBn2, UNet::kBn3, UNet::kBn4,
                                   UNet::kBn5, UNet::kBn6, UNet::kBn7};

// Adds `src` into channels [begin, begin + src.C) of `dst`.
void add_channels(Tensor& dst, int begin, const Tensor& src) {
  const std::size_t count = static_cast<std::size_t>(src.dim(1)) * src.dim(2) * src.dim(3);
  for (int n = 0; n < dst.dim(0); ++n) {
    float* d = dst.plane(n, begin);
    const float* s = src.plane(n, 0);
    for (std::size_t i = 0; i < count; ++i) d[i] += s[i];
  }
}

int round_up8(int v) { return (v + 7) / 8 * 8; }

void check_palette(const Palette& palette, const ModelWeights& weights) {
  palette.validate();
  if (palette.size() != weights.k) {
    fail(ErrorCode::kPaletteMismatch, "palette has " + std::to_string(palette.size()) +
                                          " colors but the weights were trained for K=" + std::to_string(weights.k));
  }
}

}  // namespace

UNet::UNet(int in_channels, int out_channels, Activation head)
    : in_channels_(in_channels), out_channels_(out_channels), head_(head) {
  const int c = in_channels;
  layers_.resize(kLayerCount);
  layers_[kConv1] = LayerParams::conv(c, 2 * c, 2);
  layers_[kBn1] = LayerParams::batchnorm(2 * c);
  layers_[kConv2] = LayerParams::conv(2 * c, 4 * c, 2);
  layers_[kBn2] = LayerParams::batchnorm(4 * c);
  layers_[kConv3] = LayerParams::conv(4 * c, 8 * c, 2);
  layers_[kBn3] = LayerParams::batchnorm(8 * c);
  layers_[kDeconv1] = LayerParams::deconv(8 * c, 4 * c, 2);
  layers_[kBn4] = LayerParams::batchnorm(4 * c);
  layers_[kDeconv2] = LayerParams::deconv(8 * c, 2 * c, 2);
  layers_[kBn5] = LayerParams::batchnorm(2 * c);
  layers_[kDeconv3] = LayerParams::deconv(4 * c, 2 * c, 2);
  layers_[kBn6] = LayerParams::batchnorm(2 * c);
  layers_[kConv4] = LayerParams::conv(2 * c + 3, c, 1);
  layers_[kBn7] = LayerParams::batchnorm(c);
  layers_[kHead] = LayerParams::conv(c, out_channels, 1);
}

const char* UNet::layer_name(int index) {
  static const char* names[kLayerCount] = {"conv1", "bn1", "conv2", "bn2", "conv3", "bn3", "deconv1", "bn4",
                                           "deconv2", "bn5", "deconv3", "bn6", "conv4", "bn7", "head"};
  return names[index];
}

void UNet::init(std::uint64_t seed) {
  for (int i = 0; i < kLayerCount; ++i) nn::init_layer(layers_[i], seed * 1000003ULL + static_cast<std::uint64_t>(i));
}

Tensor UNet::infer(const Tensor& x) const {
  nn::require_rank(x, 4, "UNet::infer");
  if (x.dim(1) != in_channels_) {
    fail(ErrorCode::kDimension, "network expects " + std::to_string(in_channels_) + " input channels, got " +
                                    std::to_string(x.dim(1)));
  }
  if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0) {
    fail(ErrorCode::kDimension, "network input spatial size must be divisible by 8");
  }
  const auto& p = layers_;
  auto block = [&](const Tensor& in, int conv, int bn, bool deconv) {
    Tensor a = deconv ? nn::deconv2d(in, p[conv]) : nn::conv2d(in, p[conv]);
    nn::activate_inplace(a, Activation::kRelu);
    return nn::batchnorm_eval(a, p[bn]);
  };
  const Tensor c1 = block(x, kConv1, kBn1, false);
  const Tensor c2 = block(c1, kConv2, kBn2, false);
  Tensor t = block(c2, kConv3, kBn3, false);
  t = block(t, kDeconv1, kBn4, true);
  t = block(nn::concat_channels(t, c2), kDeconv2, kBn5, true);
  t = block(nn::concat_channels(t, c1), kDeconv3, kBn6, true);
  t = block(nn::concat_channels(t, nn::slice_channels(x, 0, 3)), kConv4, kBn7, false);
  Tensor y = nn::conv2d(t, p[kHead]);
  nn::activate_inplace(y, head_);
  return y;
}

Tensor UNet::forward_impl(const Tensor& x, Trace& tr, std::vector<LayerParams>* running) const {
  nn::require_rank(x, 4, "UNet::forward");
  if (x.dim(1) != in_channels_) {
    fail(ErrorCode::kDimension, "network expects " + std::to_string(in_channels_) + " input channels, got " +
                                    std::to_string(x.dim(1)));
  }
  if (x.dim(2) % 8 != 0 || x.dim(3) % 8 != 0) {
    fail(ErrorCode::kDimension, "network input spatial size must be divisible by 8");
  }
  const auto& p = layers_;
  auto block = [&](const Tensor& in, int conv, int hidden, bool deconv) {
    Tensor a = deconv ? nn::deconv2d(in, p[conv]) : nn::conv2d(in, p[conv]);
    nn::activate_inplace(a, Activation::kRelu);
    tr.r[hidden] = std::move(a);
    const int bn = kBnLayer[hidden];
    return running ? nn::batchnorm(tr.r[hidden], (*running)[bn], BnMode::kTrain, &tr.bn[hidden])
                   : nn::batchnorm_stateless(tr.r[hidden], p[bn], BnMode::kTrain, &tr.bn[hidden]);
  };
  tr.x0 = x;
  tr.c1 = block(tr.x0, kConv1, 0, false);
  tr.c2 = block(tr.c1, kConv2, 1, false);
  tr.c3 = block(tr.c2, kConv3, 2, false);
  const Tensor d1 = block(tr.c3, kDeconv1, 3, true);
  tr.k1 = nn::concat_channels(d1, tr.c2);
  const Tensor d2 = block(tr.k1, kDeconv2, 4, true);
  tr.k2 = nn::concat_channels(d2, tr.c1);
  const Tensor d3 = block(tr.k2, kDeconv3, 5, true);
  tr.k3 = nn::concat_channels(d3, nn::slice_channels(x, 0, 3));
  tr.e = block(tr.k3, kConv4, 6, false);
  tr.y = nn::conv2d(tr.e, p[kHead]);
  nn::activate_inplace(tr.y, head_);
  return tr.y;
}

Tensor UNet::forward_train(const Tensor& x, Trace& trace) { return forward_impl(x, trace, &layers_); }

Tensor UNet::forward_train_frozen(const Tensor& x, Trace& trace) const { return forward_impl(x, trace, nullptr); }

void UNet::Grads::zero() {
  for (auto& g : layers) {
    g.weight.fill(0.0f);
    g.bias.fill(0.0f);
  }
}

UNet::Grads UNet::zero_grads() const {
  Grads g;
  for (const auto& p : layers_) g.layers.push_back(nn::LayerGrads::zeros_like(p));
  return g;
}

Tensor UNet::backward(const Trace& tr, const Tensor& dy, Grads& grads, bool need_input_grad) const {
  const auto& p = layers_;
  auto& g = grads.layers;
  const int c = in_channels_;
  // Back through ReLU -> batchnorm of hidden block `hidden`.
  auto block_back = [&](const Tensor& dout, int hidden) {
    Tensor dr = nn::batchnorm_backward(tr.bn[hidden], p[kBnLayer[hidden]], dout, &g[kBnLayer[hidden]]);
    return nn::activate_backward(tr.r[hidden], dr, Activation::kRelu);
  };

  Tensor da = nn::activate_backward(tr.y, dy, head_);
  Tensor de = nn::conv2d_backward(tr.e, p[kHead], da, &g[kHead]);

  da = block_back(de, 6);
  Tensor dk3 = nn::conv2d_backward(tr.k3, p[kConv4], da, &g[kConv4]);
  const Tensor dimg = nn::slice_channels(dk3, 2 * c, 3);

  da = block_back(nn::slice_channels(dk3, 0, 2 * c), 5);
  Tensor dk2 = nn::deconv2d_backward(tr.k2, p[kDeconv3], da, &g[kDeconv3]);
  const Tensor dc1_skip = nn::slice_channels(dk2, 2 * c, 2 * c);

  da = block_back(nn::slice_channels(dk2, 0, 2 * c), 4);
  Tensor dk1 = nn::deconv2d_backward(tr.k1, p[kDeconv2], da, &g[kDeconv2]);
  const Tensor dc2_skip = nn::slice_channels(dk1, 4 * c, 4 * c);

  da = block_back(nn::slice_channels(dk1, 0, 4 * c), 3);
  Tensor dc3 = nn::deconv2d_backward(tr.c3, p[kDeconv1], da, &g[kDeconv1]);

  da = block_back(dc3, 2);
  Tensor dc2 = nn::conv2d_backward(tr.c2, p[kConv3], da, &g[kConv3]);
  nn::add_inplace(dc2, dc2_skip);

  da = block_back(dc2, 1);
  Tensor dc1 = nn::conv2d_backward(tr.c1, p[kConv2], da, &g[kConv2]);
  nn::add_inplace(dc1, dc1_skip);

  da = block_back(dc1, 0);
  if (!need_input_grad) {
    // Weight gradients still need the im2col pass; the input gradient is
    // computed and dropped.
    nn::conv2d_backward(tr.x0, p[kConv1], da, &g[kConv1]);
    return Tensor();
  }
  Tensor dx = nn::conv2d_backward(tr.x0, p[kConv1], da, &g[kConv1]);
  add_channels(dx, 0, dimg);
  return dx;
}

std::vector<nn::ParamSlot> UNet::param_slots(const std::string& prefix, Grads& grads) {
  std::vector<nn::ParamSlot> slots;
  for (int i = 0; i < kLayerCount; ++i) {
    const std::string base = prefix + layer_name(i);
    slots.push_back({base + ".weight", &layers_[i].weight, &grads.layers[i].weight});
    slots.push_back({base + ".bias", &layers_[i].bias, &grads.layers[i].bias});
  }
  return slots;
}

ModelWeights ModelWeights::create(int k, std::uint64_t seed) {
  if (k < 1 || k > Palette::kMaxColors) fail(ErrorCode::kInvalidArgument, "K must be in [1,16]");
  ModelWeights w;
  w.k = k;
  w.alpha = UNet(3 + 3 * k, k, Activation::kSigmoid);
  w.residue = UNet(3 + 4 * k, 3 * k, Activation::kTanh);
  w.alpha.init(seed * 2 + 1);
  w.residue.init(seed * 2 + 2);
  return w;
}

Tensor build_alpha_input(const Tensor& images, const std::vector<Palette>& palettes) {
  nn::require_rank(images, 4, "build_alpha_input");
  const int n = images.dim(0), h = images.dim(2), w = images.dim(3);
  if (static_cast<int>(palettes.size()) != n) fail(ErrorCode::kDimension, "build_alpha_input: one palette per image");
  const int k = palettes[0].size();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor x({n, 3 + 3 * k, h, w});
  for (int b = 0; b < n; ++b) {
    if (palettes[b].size() != k) fail(ErrorCode::kPaletteMismatch, "build_alpha_input: palettes differ in size");
    std::memcpy(x.plane(b, 0), images.plane(b, 0), 3 * plane * sizeof(float));
    for (int i = 0; i < k; ++i) {
      for (int c = 0; c < 3; ++c) {
        float* dst = x.plane(b, 3 + 3 * i + c);
        std::fill(dst, dst + plane, palettes[b].colors[i][c]);
      }
    }
  }
  return x;
}

Tensor build_residue_input(const Tensor& images, const std::vector<Palette>& palettes, const Tensor& alphas) {
  nn::require_rank(images, 4, "build_residue_input");
  nn::require_rank(alphas, 4, "build_residue_input");
  const int n = images.dim(0), h = images.dim(2), w = images.dim(3);
  const int k = alphas.dim(1);
  if (alphas.dim(0) != n || alphas.dim(2) != h || alphas.dim(3) != w) {
    fail(ErrorCode::kDimension, "build_residue_input: alphas " + nn::shape_string(alphas.shape()) +
                                    " vs images " + nn::shape_string(images.shape()));
  }
  if (static_cast<int>(palettes.size()) != n) fail(ErrorCode::kDimension, "build_residue_input: one palette per image");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor x({n, 3 + 4 * k, h, w});
  for (int b = 0; b < n; ++b) {
    if (palettes[b].size() != k) fail(ErrorCode::kPaletteMismatch, "build_residue_input: palette size != K");
    std::memcpy(x.plane(b, 0), images.plane(b, 0), 3 * plane * sizeof(float));
    for (int i = 0; i < k; ++i) {
      for (int c = 0; c < 3; ++c) {
        float* dst = x.plane(b, 3 + 4 * i + c);
        std::fill(dst, dst + plane, palettes[b].colors[i][c]);
      }
      std::memcpy(x.plane(b, 3 + 4 * i + 3), alphas.plane(b, i), plane * sizeof(float));
    }
  }
  return x;
}

AlphaStack predict_alpha(const Image& image, const Palette& palette, const ModelWeights& weights) {
  check_palette(palette, weights);
  if (image.empty()) fail(ErrorCode::kInvalidArgument, "predict_alpha: empty image");
  const int ph = round_up8(image.height), pw = round_up8(image.width);
  const bool padded = ph != image.height || pw != image.width;
  if (padded) {
    warn("image size " + std::to_string(image.width) + "x" + std::to_string(image.height) +
         " is not a multiple of 8; padding by reflection");
  }
  const Image input = padded ? pad_reflect(image, ph, pw) : image;
  const Tensor y = weights.alpha.infer(build_alpha_input(image_to_tensor(input), {palette}));
  AlphaStack raw = tensor_to_alphas(y);
  return padded ? crop(raw, image.height, image.width) : raw;
}

ResidueStack predict_residues(const Image& image, const Palette& palette, const AlphaStack& alphas,
                              const ModelWeights& weights) {
  check_palette(palette, weights);
  if (alphas.k != weights.k || alphas.height != image.height || alphas.width != image.width) {
    fail(ErrorCode::kDimension, "predict_residues: alpha stack does not match image / K");
  }
  for (std::size_t px = 0; px < alphas.pixels(); ++px) {
    double sum = 0.0;
    for (int i = 0; i < alphas.k; ++i) sum += alphas.at(i, px);
    if (std::abs(sum - 1.0) > 1e-3) {
      fail(ErrorCode::kInvalidArgument, "predict_residues: alphas are not normalized (pixel " +
                                            std::to_string(px) + " sums to " + std::to_string(sum) + ")");
    }
  }
  const int ph = round_up8(image.height), pw = round_up8(image.width);
  const bool padded = ph != image.height || pw != image.width;
  const Image input = padded ? pad_reflect(image, ph, pw) : image;
  const AlphaStack a = padded ? pad_reflect(alphas, ph, pw) : alphas;
  const Tensor y = weights.residue.infer(build_residue_input(image_to_tensor(input), {palette}, alphas_to_tensor(a)));

  ResidueStack out;
  out.k = alphas.k;
  out.height = image.height;
  out.width = image.width;
  out.values.resize(static_cast<std::size_t>(out.k) * 3 * image.pixels());
  for (int ch = 0; ch < 3 * out.k; ++ch) {
    const float* src = y.plane(0, ch);
    float* dst = out.values.data() + ch * image.pixels();
    for (int yy = 0; yy < image.height; ++yy) {
      std::memcpy(dst + static_cast<std::size_t>(yy) * image.width, src + static_cast<std::size_t>(yy) * pw,
                  image.width * sizeof(float));
    }
  }
  return out;
}

std::vector<float> layer_colors(const Palette& palette, const ResidueStack& residues) {
  const std::size_t plane = static_cast<std::size_t>(residues.height) * residues.width;
  std::vector<float> colors(residues.values.size());
  for (int i = 0; i < residues.k; ++i) {
    for (int c = 0; c < 3; ++c) {
      const float base = palette.colors[i][c];
      const float* r = residues.plane(i, c);
      float* dst = colors.data() + (static_cast<std::size_t>(i) * 3 + c) * plane;
      for (std::size_t px = 0; px < plane; ++px) dst[px] = std::clamp(base + r[px], 0.0f, 1.0f);
    }
  }
  return colors;
}

}  // namespace softseg
