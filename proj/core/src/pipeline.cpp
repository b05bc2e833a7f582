#include <algorithm>

#include "softseg/error.hpp"
#include "softseg/trainer.hpp"

namespace softseg {

using nn::Tensor;

namespace {

constexpr float kNormEps = 1e-8f;

}  // namespace

PipelineGrads PipelineGrads::zeros_like(const ModelWeights& weights) {
  return PipelineGrads{weights.alpha.zero_grads(), weights.residue.zero_grads()};
}

void PipelineGrads::zero() {
  alpha.zero();
  residue.zero();
}

std::vector<Tensor*> PipelineGrads::tensors() {
  std::vector<Tensor*> out;
  for (UNet::Grads* g : {&alpha, &residue}) {
    for (auto& layer : g->layers) {
      out.push_back(&layer.weight);
      out.push_back(&layer.bias);
    }
  }
  return out;
}

LossTerms pipeline_step(ModelWeights& weights, const Tensor& images, const std::vector<Palette>& palettes,
                        const LossWeights& loss_weights, PipelineGrads* grads, bool update_running_stats) {
  nn::require_rank(images, 4, "pipeline_step");
  const int n = images.dim(0), h = images.dim(2), w = images.dim(3), k = weights.k;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (const Palette& p : palettes) {
    if (p.size() != k) fail(ErrorCode::kPaletteMismatch, "pipeline_step: palette size differs from trained K");
  }

  UNet::Trace alpha_trace, residue_trace;
  const Tensor alpha_in = build_alpha_input(images, palettes);
  const Tensor raw = update_running_stats ? weights.alpha.forward_train(alpha_in, alpha_trace)
                                          : weights.alpha.forward_train_frozen(alpha_in, alpha_trace);

  // alphas = raw / (sum_k raw_k + eps)
  Tensor alphas(raw.shape());
  std::vector<float> denom(static_cast<std::size_t>(n) * plane);
  for (int b = 0; b < n; ++b) {
    for (std::size_t px = 0; px < plane; ++px) {
      float s = kNormEps;
      for (int i = 0; i < k; ++i) s += raw.plane(b, i)[px];
      denom[b * plane + px] = s;
      for (int i = 0; i < k; ++i) alphas.plane(b, i)[px] = raw.plane(b, i)[px] / s;
    }
  }

  const Tensor residue_in = build_residue_input(images, palettes, alphas);
  const Tensor residues = update_running_stats ? weights.residue.forward_train(residue_in, residue_trace)
                                               : weights.residue.forward_train_frozen(residue_in, residue_trace);

  Tensor colors(residues.shape());
  for (int b = 0; b < n; ++b) {
    for (int j = 0; j < 3 * k; ++j) {
      const float base = palettes[b].colors[j / 3][j % 3];
      const float* r = residues.plane(b, j);
      float* u = colors.plane(b, j);
      for (std::size_t px = 0; px < plane; ++px) u[px] = std::clamp(base + r[px], 0.0f, 1.0f);
    }
  }

  LossGrads loss_grads;
  const LossTerms terms = compute_losses(images, palettes, alphas, colors, loss_weights, grads ? &loss_grads : nullptr);
  if (!grads) return terms;

  // Clip passes gradient only where p + r lies strictly inside (0, 1).
  Tensor d_residues = std::move(loss_grads.d_colors);
  for (int b = 0; b < n; ++b) {
    for (int j = 0; j < 3 * k; ++j) {
      const float base = palettes[b].colors[j / 3][j % 3];
      const float* r = residues.plane(b, j);
      float* d = d_residues.plane(b, j);
      for (std::size_t px = 0; px < plane; ++px) {
        const float v = base + r[px];
        if (v <= 0.0f || v >= 1.0f) d[px] = 0.0f;
      }
    }
  }

  const Tensor d_residue_in = weights.residue.backward(residue_trace, d_residues, grads->residue, true);
  Tensor& d_alphas = loss_grads.d_alphas;
  for (int b = 0; b < n; ++b) {
    for (int i = 0; i < k; ++i) {
      const float* src = d_residue_in.plane(b, 3 + 4 * i + 3);
      float* dst = d_alphas.plane(b, i);
      for (std::size_t px = 0; px < plane; ++px) dst[px] += src[px];
    }
  }

  // d raw_j = (d alpha_j - sum_i d alpha_i * alpha_i) / s
  Tensor d_raw(raw.shape());
  for (int b = 0; b < n; ++b) {
    for (std::size_t px = 0; px < plane; ++px) {
      float dot = 0.0f;
      for (int i = 0; i < k; ++i) dot += d_alphas.plane(b, i)[px] * alphas.plane(b, i)[px];
      const float inv = 1.0f / denom[b * plane + px];
      for (int i = 0; i < k; ++i) d_raw.plane(b, i)[px] = (d_alphas.plane(b, i)[px] - dot) * inv;
    }
  }
  weights.alpha.backward(alpha_trace, d_raw, grads->alpha, false);
  return terms;
}

}  // namespace softseg
