#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

#include "softseg/error.hpp"
#include "softseg/log.hpp"
#include "softseg/palette.hpp"
#include "softseg/storage.hpp"

namespace softseg {
namespace {

Image from_mat(const cv::Mat& raw, const std::string& label) {
  if (raw.empty()) fail(ErrorCode::kIo, "cannot decode image " + label);
  double scale = 0.0;
  switch (raw.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: fail(ErrorCode::kIo, label + ": only 8- and 16-bit images are supported");
  }
  cv::Mat rgb;
  switch (raw.channels()) {
    case 1: cv::cvtColor(raw, rgb, cv::COLOR_GRAY2RGB); break;
    case 3: cv::cvtColor(raw, rgb, cv::COLOR_BGR2RGB); break;
    case 4:
      warn(label + ": alpha channel ignored");
      cv::cvtColor(raw, rgb, cv::COLOR_BGRA2RGB);
      break;
    default: fail(ErrorCode::kIo, label + ": unsupported channel count " + std::to_string(raw.channels()));
  }
  cv::Mat f;
  rgb.convertTo(f, CV_32FC3, scale);
  Image img(f.rows, f.cols);
  for (int y = 0; y < f.rows; ++y) {
    const auto* row = f.ptr<cv::Vec3f>(y);
    for (int x = 0; x < f.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][c];
    }
  }
  return img;
}

cv::Mat to_bgr8(const Image& image) {
  cv::Mat m(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) row[x][2 - c] = quantize8(image.at(c, y, x));
    }
  }
  return m;
}

}  // namespace

std::uint8_t quantize8(float v) {
  const double scaled = std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(std::round(scaled));  // std::round is half away from zero
}

Image load_image(const std::string& path) {
  const cv::Mat raw = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (raw.empty()) fail(ErrorCode::kIo, "cannot read image " + path);
  return from_mat(raw, path);
}

Image decode_image(std::span<const std::uint8_t> bytes, const std::string& label) {
  if (bytes.empty()) fail(ErrorCode::kParse, label + ": empty image data");
  const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
  const cv::Mat raw = cv::imdecode(buf, cv::IMREAD_UNCHANGED);
  if (raw.empty()) fail(ErrorCode::kParse, label + ": not a decodable PNG or JPEG");
  return from_mat(raw, label);
}

std::vector<std::uint8_t> encode_png(const Image& image) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", to_bgr8(image), out)) fail(ErrorCode::kIo, "png encoding failed");
  return out;
}

void save_image(const Image& image, const std::string& path) {
  bool ok = false;
  try {
    ok = cv::imwrite(path, to_bgr8(image));
  } catch (const cv::Exception& e) {
    fail(ErrorCode::kIo, "cannot write " + path + ": " + e.what());
  }
  if (!ok) fail(ErrorCode::kIo, "cannot write " + path);
}

Palette load_palette_file(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  try {
    return parse_palette(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const Error& e) {
    fail(e.code(), path + ": " + e.what());
  }
}

void save_palette_file(const Palette& palette, const std::string& path) {
  const std::string text = format_palette(palette);
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace softseg
