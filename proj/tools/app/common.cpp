#include "common.hpp"

#include <json.hpp>

#include "softseg/error.hpp"

namespace softseg::app {

std::string options_to_json(const DecomposeOptions& options) {
  nlohmann::json j;
  j["guided_filter"] = options.guided_filter;
  j["filter_radius"] = options.filter_radius;
  j["filter_eps"] = options.filter_eps;
  nlohmann::json masks = nlohmann::json::array();
  for (const LayerMask& m : options.masks) masks.push_back({{"layer", m.layer}, {"mode", mask_mode_name(m.mode)}});
  j["masks"] = masks;
  return j.dump();
}

std::vector<float> mask_from_image(const Image& image) {
  std::vector<float> mask(image.pixels());
  for (std::size_t i = 0; i < mask.size(); ++i) {
    mask[i] = (image.plane(0)[i] + image.plane(1)[i] + image.plane(2)[i]) / 3.0f;
  }
  return mask;
}

MaskMode parse_mask_mode(const std::string& text) {
  if (text == "multiply") return MaskMode::kMultiply;
  if (text == "set") return MaskMode::kSet;
  fail(ErrorCode::kParse, "mask mode must be 'multiply' or 'set', got '" + text + "'");
}

const char* mask_mode_name(MaskMode mode) { return mode == MaskMode::kSet ? "set" : "multiply"; }

}  // namespace softseg::app
