#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "softseg/image.hpp"
#include "softseg/optim.hpp"
#include "softseg/predictor.hpp"

namespace softseg {

// ---- images -------------------------------------------------------------

/// PNG or JPEG (8- or 16-bit) to [0,1] RGB. Gray inputs are replicated to
/// three channels; an alpha channel is dropped with a warning.
Image load_image(const std::string& path);
Image decode_image(std::span<const std::uint8_t> bytes, const std::string& label = "image");
std::vector<std::uint8_t> encode_png(const Image& image);
void save_image(const Image& image, const std::string& path);

/// Round half away from zero of v * 255, clamped to [0, 255].
std::uint8_t quantize8(float v);

Palette load_palette_file(const std::string& path);
void save_palette_file(const Palette& palette, const std::string& path);

// ---- layer export ---------------------------------------------------------

struct ExportOptions {
  bool sixteen_bit = false;
  std::string options_json = "{}";  // decomposition options echoed into the manifest
  std::string weights_hash;
};

struct LayerManifest {
  Palette palette;
  int k = 0;
  int width = 0;
  int height = 0;
  int bit_depth = 8;
  std::vector<std::string> layer_files;
  std::string options_json = "{}";
  std::string weights_hash;

  std::string to_json() const;
  static LayerManifest from_json(const std::string& text);
};

/// RGBA PNG per layer (RGB = u_i, A = alpha_i). 8-bit alphas are rounded so
/// they sum to exactly 255 per pixel and colors are rounded half away from
/// zero, with the colors of the highest-alpha layers re-chosen wherever the
/// composite would otherwise drift by more than 1/255.
std::vector<std::vector<std::uint8_t>> encode_layers(const LayerStack& stack, bool sixteen_bit = false);
LayerStack decode_layers(const std::vector<std::vector<std::uint8_t>>& pngs, const Palette& palette);

/// Writes layer_00.png ... and manifest.json into dir (created if missing);
/// returns the manifest path.
std::string save_layers(const LayerStack& stack, const std::string& dir, const ExportOptions& options = {});
LayerStack load_layers(const std::string& dir, LayerManifest* manifest = nullptr);

// ---- weights ("SSEG" container) ---------------------------------------------

struct Checkpoint {
  ModelWeights weights;
  std::optional<nn::OptimizerState> optimizer;
};

std::vector<std::uint8_t> serialize_weights(const ModelWeights& weights, const nn::OptimizerState* optimizer = nullptr);
/// Validates K, channel widths and every blob shape against the declared
/// architecture.
Checkpoint deserialize_weights(std::span<const std::uint8_t> bytes);

void save_weights(const std::string& path, const ModelWeights& weights,
                  const nn::OptimizerState* optimizer = nullptr);
Checkpoint load_checkpoint(const std::string& path);
ModelWeights load_weights(const std::string& path);

/// SHA-256 (hex) of the weights-only serialization.
std::string weights_hash(const ModelWeights& weights);

// ---- encodings ------------------------------------------------------------

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws ErrorCode::kParse on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

}  // namespace softseg
