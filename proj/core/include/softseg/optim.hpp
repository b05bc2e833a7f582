#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "softseg/tensor.hpp"

namespace softseg::nn {

struct AdamConfig {
  float lr = 2e-4f;
  float beta1 = 0.0f;
  float beta2 = 0.99f;
  float epsilon = 1e-8f;
};

struct OptimizerState {
  AdamConfig config;
  std::int64_t step_count = 0;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
};

/// A parameter tensor paired with its gradient.
struct ParamSlot {
  std::string name;
  Tensor* value = nullptr;
  const Tensor* grad = nullptr;
};

/// Bias-corrected Adam update over all slots. Moments are allocated on the
/// first call. Throws ErrorCode::kNumeric naming the offending parameter if any
/// gradient is non-finite; in that case neither parameters nor state change.
void adam_step(std::span<const ParamSlot> params, OptimizerState& state);

/// Global L2 norm over all gradients.
double global_grad_norm(std::span<const ParamSlot> params);

/// Scales gradients in place so their global norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor* const> grads, double max_norm);

}  // namespace softseg::nn
