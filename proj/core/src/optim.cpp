#include "softseg/optim.hpp"

#include <cmath>

#include "softseg/error.hpp"

namespace softseg::nn {

void adam_step(std::span<const ParamSlot> params, OptimizerState& state) {
  for (const ParamSlot& slot : params) {
    if (!slot.value || !slot.grad) fail(ErrorCode::kInvalidArgument, "adam_step: null slot " + slot.name);
    require_same_shape(*slot.value, *slot.grad, "adam_step");
    if (!slot.grad->all_finite()) fail(ErrorCode::kNumeric, "adam_step: non-finite gradient in " + slot.name);
  }
  if (state.first_moment.empty()) {
    for (const ParamSlot& slot : params) {
      state.first_moment.emplace_back(slot.value->shape());
      state.second_moment.emplace_back(slot.value->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    fail(ErrorCode::kDimension, "adam_step: optimizer state holds " + std::to_string(state.first_moment.size()) +
                                    " tensors for " + std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(*params[i].value, state.first_moment[i], "adam_step");
  }

  const AdamConfig& cfg = state.config;
  const std::int64_t t = ++state.step_count;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(t));
  const float step = static_cast<float>(cfg.lr / bc1);
  const float inv_bc2 = static_cast<float>(1.0 / bc2);

  for (std::size_t i = 0; i < params.size(); ++i) {
    float* p = params[i].value->raw();
    const float* g = params[i].grad->raw();
    float* m = state.first_moment[i].raw();
    float* v = state.second_moment[i].raw();
    for (std::size_t j = 0; j < params[i].value->numel(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0f - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0f - cfg.beta2) * g[j] * g[j];
      p[j] -= step * m[j] / (std::sqrt(v[j] * inv_bc2) + cfg.epsilon);
    }
  }
}

double global_grad_norm(std::span<const ParamSlot> params) {
  double sq = 0.0;
  for (const ParamSlot& slot : params) {
    for (float g : slot.grad->data()) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<Tensor* const> grads, double max_norm) {
  double sq = 0.0;
  for (const Tensor* g : grads) {
    for (float v : g->data()) sq += static_cast<double>(v) * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float scale = static_cast<float>(max_norm / norm);
    for (Tensor* g : grads) {
      for (float& v : g->data()) v *= scale;
    }
  }
  return norm;
}

}  // namespace softseg::nn
