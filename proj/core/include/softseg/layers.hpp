#pragma once

#include <cstdint>
#include <vector>

#include "softseg/tensor.hpp"

namespace softseg::nn {

enum class LayerKind { kConv, kDeconv, kBatchNorm };

/// Parameters of one trainable layer.
///
/// Weight layouts:
///   conv      [out, in, k, k]
///   deconv    [in, out, k, k]   (the kernel of the conv it is the adjoint of)
///   batchnorm [channels]        (scale); bias holds the shift
struct LayerParams {
  LayerKind kind = LayerKind::kConv;
  Tensor weight;
  Tensor bias;
  Tensor running_mean;  // batchnorm only
  Tensor running_var;   // batchnorm only
  int stride = 1;
  int padding = 1;
  int kernel_size = 3;
  float bn_eps = 1e-5f;
  float bn_momentum = 0.1f;

  static LayerParams conv(int in_channels, int out_channels, int stride);
  static LayerParams deconv(int in_channels, int out_channels, int stride);
  static LayerParams batchnorm(int channels);

  int in_channels() const;
  int out_channels() const;
};

/// Gradients with the same shapes as LayerParams::weight / bias.
struct LayerGrads {
  Tensor weight;
  Tensor bias;

  static LayerGrads zeros_like(const LayerParams& p);
};

/// Kaiming-normal (fan-in) weights, zero biases; batchnorm scale 1, shift 0.
void init_layer(LayerParams& p, std::uint64_t seed);

// Cross-correlation with zero padding. Output spatial size is H / stride.
Tensor conv2d(const Tensor& x, const LayerParams& p);
/// Returns dL/dx and accumulates dL/dweight, dL/dbias into `grads` when given.
Tensor conv2d_backward(const Tensor& x, const LayerParams& p, const Tensor& dy, LayerGrads* grads);

// Transposed convolution: the input-gradient map of conv2d with the same
// kernel, plus a bias. Output spatial size is H * stride.
Tensor deconv2d(const Tensor& x, const LayerParams& p);
Tensor deconv2d_backward(const Tensor& x, const LayerParams& p, const Tensor& dy, LayerGrads* grads);

enum class BnMode { kTrain, kEval };

struct BatchNormCache {
  BnMode mode = BnMode::kEval;
  Tensor xhat;
  std::vector<float> inv_std;
};

/// Train mode normalizes with batch statistics (biased variance) and blends
/// them into the running statistics; eval mode uses the running statistics.
Tensor batchnorm(const Tensor& x, LayerParams& p, BnMode mode, BatchNormCache* cache);
/// Same as batchnorm but never updates the running statistics.
Tensor batchnorm_stateless(const Tensor& x, const LayerParams& p, BnMode mode, BatchNormCache* cache);
/// Eval-mode forward without a cache.
Tensor batchnorm_eval(const Tensor& x, const LayerParams& p);
Tensor batchnorm_backward(const BatchNormCache& cache, const LayerParams& p, const Tensor& dy,
                          LayerGrads* grads);

enum class Activation { kRelu, kSigmoid, kTanh };

Tensor activate(const Tensor& x, Activation kind);
void activate_inplace(Tensor& x, Activation kind);
/// Derivative expressed through the forward output y.
Tensor activate_backward(const Tensor& y, const Tensor& dy, Activation kind);

}  // namespace softseg::nn
