#pragma once

#include <string>
#include <vector>

#include "softseg/image.hpp"
#include "softseg/layer_ops.hpp"

namespace softseg::app {

/// Decomposition options as the JSON object recorded in manifests and
/// accepted by the HTTP service (masks are listed without their pixels).
std::string options_to_json(const DecomposeOptions& options);

/// Gray mask from an image: the channel mean of every pixel.
std::vector<float> mask_from_image(const Image& image);

MaskMode parse_mask_mode(const std::string& text);
const char* mask_mode_name(MaskMode mode);

/// Exit status for a library error: usage-type failures are still runtime
/// failures once arguments parsed.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFailure = 2;

}  // namespace softseg::app
