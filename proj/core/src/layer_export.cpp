#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "softseg/error.hpp"
#include "softseg/layer_ops.hpp"
#include "softseg/storage.hpp"

namespace softseg {
namespace {

using nlohmann::json;

// Integer alphas summing to exactly `levels`; leftover units go to the
// largest fractional parts, ties to the lower layer index.
void largest_remainder(const double* a, int k, int levels, int* out, int* order) {
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += std::max(a[i], 0.0);
  double frac[Palette::kMaxColors];
  int used = 0;
  for (int i = 0; i < k; ++i) {
    const double v = sum > 0.0 ? std::max(a[i], 0.0) / sum * levels : static_cast<double>(levels) / k;
    out[i] = static_cast<int>(std::floor(v));
    frac[i] = v - out[i];
    used += out[i];
  }
  std::iota(order, order + k, 0);
  std::stable_sort(order, order + k, [&](int x, int y) { return frac[x] > frac[y]; });
  for (int j = 0; used < levels; ++j, ++used) ++out[order[j % k]];
}

int round_level(double v, int levels) {
  return static_cast<int>(std::round(std::clamp(v, 0.0, 1.0) * levels));
}

std::string layer_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "layer_%02d.png", i);
  return buf;
}

}  // namespace

std::vector<std::vector<std::uint8_t>> encode_layers(const LayerStack& stack, bool sixteen_bit) {
  stack.validate_shape();
  const int k = stack.k(), h = stack.height(), w = stack.width();
  const int levels = sixteen_bit ? 65535 : 255;
  const int type = sixteen_bit ? CV_16UC4 : CV_8UC4;
  std::vector<cv::Mat> mats;
  for (int i = 0; i < k; ++i) mats.emplace_back(h, w, type);

  const Image target = compose(stack);
  const std::size_t n = stack.pixels();
  int qa[Palette::kMaxColors], order[Palette::kMaxColors], qu[Palette::kMaxColors][3];
  double a[Palette::kMaxColors];
  for (std::size_t px = 0; px < n; ++px) {
    for (int i = 0; i < k; ++i) a[i] = stack.alphas.at(i, px);
    largest_remainder(a, k, levels, qa, order);
    for (int i = 0; i < k; ++i) {
      for (int c = 0; c < 3; ++c) qu[i][c] = round_level(stack.color_plane(i, c)[px], levels);
    }
    // Re-choose colors of the most opaque layers until the quantized composite
    // sits within half a level of the float composite.
    std::sort(order, order + k, [&](int x, int y) { return qa[x] != qa[y] ? qa[x] > qa[y] : x < y; });
    for (int c = 0; c < 3; ++c) {
      const double want = static_cast<double>(target.plane(c)[px]) * levels * levels;
      for (int j = 0; j < k && qa[order[j]] > 0; ++j) {
        double have = 0.0;
        for (int i = 0; i < k; ++i) have += static_cast<double>(qa[i]) * qu[i][c];
        if (std::abs(have - want) <= 0.5 * levels) break;
        const int i = order[j];
        const double rest = have - static_cast<double>(qa[i]) * qu[i][c];
        qu[i][c] = static_cast<int>(std::clamp(std::round((want - rest) / qa[i]), 0.0, static_cast<double>(levels)));
      }
    }
    const int y = static_cast<int>(px / w), x = static_cast<int>(px % w);
    for (int i = 0; i < k; ++i) {
      if (sixteen_bit) {
        mats[i].at<cv::Vec4w>(y, x) = cv::Vec4w(qu[i][2], qu[i][1], qu[i][0], qa[i]);
      } else {
        mats[i].at<cv::Vec4b>(y, x) = cv::Vec4b(qu[i][2], qu[i][1], qu[i][0], qa[i]);
      }
    }
  }
  std::vector<std::vector<std::uint8_t>> out(k);
  for (int i = 0; i < k; ++i) {
    if (!cv::imencode(".png", mats[i], out[i])) fail(ErrorCode::kIo, "png encoding failed for layer " + std::to_string(i));
  }
  return out;
}

LayerStack decode_layers(const std::vector<std::vector<std::uint8_t>>& pngs, const Palette& palette) {
  const int k = static_cast<int>(pngs.size());
  if (k != palette.size()) fail(ErrorCode::kPaletteMismatch, "layer count differs from palette size");
  LayerStack stack;
  stack.palette = palette;
  for (int i = 0; i < k; ++i) {
    const cv::Mat buf(1, static_cast<int>(pngs[i].size()), CV_8U, const_cast<std::uint8_t*>(pngs[i].data()));
    const cv::Mat m = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
    if (m.empty() || m.channels() != 4 || (m.depth() != CV_8U && m.depth() != CV_16U)) {
      fail(ErrorCode::kIo, "layer " + std::to_string(i) + " is not an 8- or 16-bit RGBA png");
    }
    if (i == 0) {
      stack.alphas = AlphaStack(k, m.rows, m.cols);
      stack.colors.assign(static_cast<std::size_t>(k) * 3 * stack.pixels(), 0.0f);
    } else if (m.rows != stack.height() || m.cols != stack.width()) {
      fail(ErrorCode::kDimension, "layer " + std::to_string(i) + " differs in size from layer 0");
    }
    const bool wide = m.depth() == CV_16U;
    const float scale = wide ? 1.0f / 65535.0f : 1.0f / 255.0f;
    for (int y = 0; y < m.rows; ++y) {
      for (int x = 0; x < m.cols; ++x) {
        float v[4];
        if (wide) {
          const auto p = m.at<cv::Vec4w>(y, x);
          for (int c = 0; c < 4; ++c) v[c] = p[c] * scale;
        } else {
          const auto p = m.at<cv::Vec4b>(y, x);
          for (int c = 0; c < 4; ++c) v[c] = p[c] * scale;
        }
        const std::size_t px = static_cast<std::size_t>(y) * m.cols + x;
        stack.set_color(i, px, {v[2], v[1], v[0]});
        stack.alphas.at(i, px) = v[3];
      }
    }
  }
  stack.alphas.normalized = true;
  return stack;
}

std::string LayerManifest::to_json() const {
  json j;
  json colors = json::array();
  for (const Rgb& c : palette.colors) colors.push_back({c[0], c[1], c[2]});
  j["palette"] = colors;
  j["k"] = k;
  j["image_size"] = {{"width", width}, {"height", height}};
  j["bit_depth"] = bit_depth;
  j["layers"] = layer_files;
  j["options"] = json::parse(options_json.empty() ? "{}" : options_json);
  j["weights_hash"] = weights_hash;
  return j.dump(2);
}

LayerManifest LayerManifest::from_json(const std::string& text) {
  LayerManifest m;
  try {
    const json j = json::parse(text);
    for (const auto& c : j.at("palette")) m.palette.colors.push_back({c.at(0).get<float>(), c.at(1).get<float>(), c.at(2).get<float>()});
    m.k = j.at("k").get<int>();
    m.width = j.at("image_size").at("width").get<int>();
    m.height = j.at("image_size").at("height").get<int>();
    m.bit_depth = j.value("bit_depth", 8);
    if (j.contains("layers")) {
      m.layer_files = j.at("layers").get<std::vector<std::string>>();
    } else {
      for (int i = 0; i < m.k; ++i) m.layer_files.push_back(layer_name(i));
    }
    m.options_json = j.contains("options") ? j.at("options").dump() : "{}";
    m.weights_hash = j.value("weights_hash", "");
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("manifest: ") + e.what());
  }
  if (m.k != m.palette.size() || m.k != static_cast<int>(m.layer_files.size())) {
    fail(ErrorCode::kParse, "manifest: k disagrees with the palette or layer list");
  }
  m.palette.validate();
  return m;
}

std::string save_layers(const LayerStack& stack, const std::string& dir, const ExportOptions& options) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIo, "cannot create " + dir + ": " + ec.message());
  const auto pngs = encode_layers(stack, options.sixteen_bit);
  LayerManifest m;
  m.palette = stack.palette;
  m.k = stack.k();
  m.width = stack.width();
  m.height = stack.height();
  m.bit_depth = options.sixteen_bit ? 16 : 8;
  m.options_json = options.options_json;
  m.weights_hash = options.weights_hash;
  for (int i = 0; i < m.k; ++i) {
    m.layer_files.push_back(layer_name(i));
    write_file((fs::path(dir) / m.layer_files.back()).string(), pngs[i]);
  }
  const std::string text = m.to_json();
  const std::string path = (fs::path(dir) / "manifest.json").string();
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  return path;
}

LayerStack load_layers(const std::string& dir, LayerManifest* manifest) {
  namespace fs = std::filesystem;
  const auto bytes = read_file((fs::path(dir) / "manifest.json").string());
  LayerManifest m = LayerManifest::from_json(std::string(bytes.begin(), bytes.end()));
  std::vector<std::vector<std::uint8_t>> pngs;
  for (const std::string& f : m.layer_files) pngs.push_back(read_file((fs::path(dir) / f).string()));
  LayerStack stack = decode_layers(pngs, m.palette);
  if (stack.width() != m.width || stack.height() != m.height) {
    fail(ErrorCode::kDimension, "manifest image_size disagrees with the layer files in " + dir);
  }
  if (manifest) *manifest = std::move(m);
  return stack;
}

}  // namespace softseg
