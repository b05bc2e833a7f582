#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "softseg/image.hpp"
#include "softseg/layers.hpp"
#include "softseg/optim.hpp"

namespace softseg {

/// Three stride-2 convs, three stride-2 deconvs with skip concatenations at
/// every scale, then a stride-1 conv block and a stride-1 conv head.
/// With C input channels the widths are C -> 2C -> 4C -> 8C and back; the RGB
/// image (the first three input channels) is concatenated before the last
/// conv block. Each hidden block is conv -> ReLU -> batchnorm.
class UNet {
 public:
  enum Layer : int {
    kConv1, kBn1, kConv2, kBn2, kConv3, kBn3,
    kDeconv1, kBn4, kDeconv2, kBn5, kDeconv3, kBn6,
    kConv4, kBn7, kHead, kLayerCount
  };

  UNet() = default;
  UNet(int in_channels, int out_channels, nn::Activation head);

  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }
  nn::Activation head_activation() const { return head_; }

  void init(std::uint64_t seed);

  /// Eval-mode forward; const so that concurrent callers may share weights.
  nn::Tensor infer(const nn::Tensor& x) const;

  /// Intermediate values of a train-mode forward pass.
  struct Trace {
    nn::Tensor x0, c1, c2, c3, k1, k2, k3, e;  // conv inputs
    nn::Tensor r[7];                            // ReLU outputs of the hidden blocks
    nn::BatchNormCache bn[7];
    nn::Tensor y;
  };

  /// Train-mode forward (batch statistics; updates running statistics).
  nn::Tensor forward_train(const nn::Tensor& x, Trace& trace);
  /// Train-mode forward that leaves running statistics untouched.
  nn::Tensor forward_train_frozen(const nn::Tensor& x, Trace& trace) const;

  struct Grads {
    std::vector<nn::LayerGrads> layers;
    void zero();
  };
  Grads zero_grads() const;

  /// Backpropagates dL/dy; accumulates parameter gradients into `grads` and
  /// returns dL/dx (empty tensor when need_input_grad is false).
  nn::Tensor backward(const Trace& trace, const nn::Tensor& dy, Grads& grads, bool need_input_grad) const;

  std::vector<nn::LayerParams>& layers() { return layers_; }
  const std::vector<nn::LayerParams>& layers() const { return layers_; }
  static const char* layer_name(int index);

  /// Trainable tensors (weights and biases) with matching gradient slots.
  std::vector<nn::ParamSlot> param_slots(const std::string& prefix, Grads& grads);

 private:
  nn::Tensor forward_impl(const nn::Tensor& x, Trace& trace, std::vector<nn::LayerParams>* running) const;

  int in_channels_ = 0;
  int out_channels_ = 0;
  nn::Activation head_ = nn::Activation::kSigmoid;
  std::vector<nn::LayerParams> layers_;
};

/// Parameters of both predictors for a fixed palette size K.
struct ModelWeights {
  int k = 0;
  UNet alpha;    // input 3 + 3K channels, K sigmoid outputs
  UNet residue;  // input 3 + 4K channels, 3K tanh outputs

  static ModelWeights create(int k, std::uint64_t seed);
};

/// Image planes followed by one broadcast RGB plane triple per palette color.
/// images: [N, 3, H, W]; palettes: one per batch entry.
nn::Tensor build_alpha_input(const nn::Tensor& images, const std::vector<Palette>& palettes);
/// Image planes followed by K blocks of (palette RGB planes, alpha plane).
nn::Tensor build_residue_input(const nn::Tensor& images, const std::vector<Palette>& palettes,
                               const nn::Tensor& alphas);

/// Zero-centered residues r_i, K x 3 planes.
struct ResidueStack {
  int k = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  const float* plane(int layer, int c) const {
    return values.data() + (static_cast<std::size_t>(layer) * 3 + c) * height * width;
  }
};

/// Raw (unnormalized) alphas in (0,1). Sizes not divisible by 8 are padded by
/// reflection and cropped back, with a warning.
AlphaStack predict_alpha(const Image& image, const Palette& palette, const ModelWeights& weights);

/// Residues in (-1,1) from the image, palette and normalized alphas.
ResidueStack predict_residues(const Image& image, const Palette& palette, const AlphaStack& processed_alphas,
                              const ModelWeights& weights);

/// Layer colors u_i = clip(p_i + r_i, 0, 1) as K x 3 planes.
std::vector<float> layer_colors(const Palette& palette, const ResidueStack& residues);

}  // namespace softseg
