#include "softseg/palette.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <random>

#include <json.hpp>

#include "softseg/error.hpp"
#include "softseg/log.hpp"

namespace softseg {
namespace {

constexpr int kMaxIterations = 50;
constexpr std::size_t kMaxPoints = std::size_t{1} << 18;

double dist2(const Rgb& a, const Rgb& b) {
  double s = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double d = static_cast<double>(a[c]) - b[c];
    s += d * d;
  }
  return s;
}

int nearest(const Rgb& p, std::span<const Rgb> centers, double* best_d2 = nullptr) {
  int best = 0;
  double best_d = dist2(p, centers[0]);
  for (int j = 1; j < static_cast<int>(centers.size()); ++j) {
    const double d = dist2(p, centers[j]);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  if (best_d2) *best_d2 = best_d;
  return best;
}

struct LloydState {
  std::vector<Rgb> centers;
  std::vector<std::size_t> counts;
  bool changed = false;
};

LloydState lloyd_step(std::span<const Rgb> points, std::span<const Rgb> centers, std::vector<int>& assignment) {
  const int k = static_cast<int>(centers.size());
  std::vector<std::array<double, 3>> sums(k, {0.0, 0.0, 0.0});
  LloydState out;
  out.counts.assign(k, 0);
  std::vector<double> d2(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int j = nearest(points[i], centers, &d2[i]);
    if (assignment[i] != j) out.changed = true;
    assignment[i] = j;
    ++out.counts[j];
    for (int c = 0; c < 3; ++c) sums[j][c] += points[i][c];
  }
  out.centers.assign(centers.begin(), centers.end());
  std::vector<bool> taken(points.size(), false);
  for (int j = 0; j < k; ++j) {
    if (out.counts[j] > 0) {
      for (int c = 0; c < 3; ++c) out.centers[j][c] = static_cast<float>(sums[j][c] / out.counts[j]);
      continue;
    }
    // Empty cluster: farthest point from its own center, first index on ties.
    std::size_t far = 0;
    double far_d = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (!taken[i] && d2[i] > far_d) {
        far_d = d2[i];
        far = i;
      }
    }
    taken[far] = true;
    out.centers[j] = points[far];
    out.changed = true;
  }
  return out;
}

// k-means++: first center uniform, the rest proportional to squared distance.
std::vector<Rgb> seed_centers(std::span<const Rgb> points, int k, std::mt19937_64& rng) {
  std::vector<Rgb> centers;
  centers.push_back(points[std::uniform_int_distribution<std::size_t>(0, points.size() - 1)(rng)]);
  std::vector<double> d2(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) d2[i] = dist2(points[i], centers[0]);
  while (static_cast<int>(centers.size()) < k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      double r = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick + 1 < points.size(); ++pick) {
        r -= d2[pick];
        if (r < 0.0) break;
      }
    }
    centers.push_back(points[pick]);
    for (std::size_t i = 0; i < points.size(); ++i) d2[i] = std::min(d2[i], dist2(points[i], centers.back()));
  }
  return centers;
}

Palette finish(std::vector<Rgb> centers, const std::vector<std::size_t>& counts) {
  std::vector<int> order(centers.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return counts[a] > counts[b]; });
  Palette p;
  p.source = PaletteSource::kAuto;
  for (int j : order) {
    Rgb c = centers[j];
    for (float& v : c) v = std::clamp(v, 0.0f, 1.0f);
    p.colors.push_back(c);
  }
  return p;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void line_error(int line, const std::string& msg) {
  fail(ErrorCode::kParse, "palette line " + std::to_string(line) + ": " + msg);
}

Rgb parse_decimal_line(const std::string& s, int line) {
  Rgb out{};
  std::size_t pos = 0;
  for (int c = 0; c < 3; ++c) {
    const std::size_t end = c < 2 ? s.find(',', pos) : s.size();
    if (end == std::string::npos) line_error(line, "expected three comma-separated values");
    const std::string field = trim(std::string_view(s).substr(pos, end - pos));
    float v = 0.0f;
    const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
    if (field.empty() || res.ec != std::errc() || res.ptr != field.data() + field.size()) {
      line_error(line, "'" + field + "' is not a number");
    }
    if (!(v >= 0.0f && v <= 1.0f)) line_error(line, "channel " + field + " outside [0,1]");
    out[c] = v;
    pos = end + 1;
  }
  return out;
}

Palette parse_json_palette(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, std::string("palette JSON: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("colors") || !doc["colors"].is_array()) {
    fail(ErrorCode::kParse, "palette JSON: expected {\"colors\": [[r,g,b], ...]}");
  }
  Palette p;
  for (std::size_t i = 0; i < doc["colors"].size(); ++i) {
    const auto& c = doc["colors"][i];
    if (c.is_string()) {
      p.colors.push_back(parse_hex_color(c.get<std::string>()));
      continue;
    }
    if (!c.is_array() || c.size() != 3) fail(ErrorCode::kParse, "palette JSON: colors[" + std::to_string(i) + "]");
    Rgb rgb{};
    for (int ch = 0; ch < 3; ++ch) {
      if (!c[ch].is_number()) fail(ErrorCode::kParse, "palette JSON: colors[" + std::to_string(i) + "]");
      rgb[ch] = c[ch].get<float>();
    }
    p.colors.push_back(rgb);
  }
  p.validate();
  return p;
}

}  // namespace

double kmeans_objective(std::span<const Rgb> points, std::span<const Rgb> centers) {
  if (centers.empty()) fail(ErrorCode::kInvalidArgument, "kmeans: no centers");
  double total = 0.0;
  for (const Rgb& p : points) {
    double d = 0.0;
    nearest(p, centers, &d);
    total += d;
  }
  return total;
}

std::vector<Rgb> kmeans_iterate(std::span<const Rgb> points, std::span<const Rgb> centers) {
  if (points.empty()) fail(ErrorCode::kInvalidArgument, "kmeans: at least one point required");
  if (centers.empty()) fail(ErrorCode::kInvalidArgument, "kmeans: no centers");
  std::vector<int> assignment(points.size(), -1);
  return lloyd_step(points, centers, assignment).centers;
}

Palette extract_palette(const Image& image, int k, std::uint64_t seed) {
  if (image.empty()) fail(ErrorCode::kInvalidArgument, "extract_palette: empty image");
  if (k < 1 || k > Palette::kMaxColors) {
    fail(ErrorCode::kInvalidArgument, "extract_palette: k must be in [1, 16], got " + std::to_string(k));
  }
  // Sorting first makes the result independent of pixel order.
  std::vector<Rgb> points(image.pixels());
  for (std::size_t i = 0; i < points.size(); ++i) points[i] = image.pixel(i);
  std::sort(points.begin(), points.end());

  std::vector<Rgb> distinct;
  std::vector<std::size_t> distinct_counts;
  for (const Rgb& p : points) {
    if (distinct.empty() || distinct.back() != p) {
      if (static_cast<int>(distinct.size()) > k) break;
      distinct.push_back(p);
      distinct_counts.push_back(0);
    }
    ++distinct_counts.back();
  }
  if (static_cast<int>(distinct.size()) <= k) {
    Palette p = finish(distinct, distinct_counts);
    const int unique = p.size();
    for (int j = 0; p.size() < k; j = (j + 1) % unique) p.colors.push_back(p.colors[j]);
    if (unique < k) {
      p.has_duplicates = true;
      warn("extract_palette: image has " + std::to_string(unique) + " distinct colors, fewer than k=" +
           std::to_string(k) + "; palette contains duplicates");
    }
    return p;
  }

  std::mt19937_64 rng(seed);
  std::vector<Rgb> sample;
  std::span<const Rgb> fit = points;
  if (points.size() > kMaxPoints) {
    std::vector<std::size_t> idx(points.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < kMaxPoints; ++i) {
      std::swap(idx[i], idx[std::uniform_int_distribution<std::size_t>(i, idx.size() - 1)(rng)]);
    }
    idx.resize(kMaxPoints);
    std::sort(idx.begin(), idx.end());
    sample.reserve(kMaxPoints);
    for (std::size_t i : idx) sample.push_back(points[i]);
    fit = sample;
  }

  std::vector<Rgb> centers = seed_centers(fit, k, rng);
  std::vector<int> assignment(fit.size(), -1);
  for (int it = 0; it < kMaxIterations; ++it) {
    LloydState s = lloyd_step(fit, centers, assignment);
    centers = std::move(s.centers);
    if (!s.changed) break;
  }
  // Final means and populations over every pixel, not just the sample.
  std::vector<int> full_assignment(points.size(), -1);
  LloydState last = lloyd_step(points, centers, full_assignment);
  return finish(last.centers, last.counts);
}

Rgb parse_hex_color(std::string_view text) {
  const std::string s = trim(text);
  if (s.size() != 7 || s[0] != '#') fail(ErrorCode::kParse, "color '" + s + "' is not #RRGGBB");
  Rgb out{};
  for (int c = 0; c < 3; ++c) {
    unsigned v = 0;
    const char* b = s.data() + 1 + 2 * c;
    const auto res = std::from_chars(b, b + 2, v, 16);
    if (res.ec != std::errc() || res.ptr != b + 2) fail(ErrorCode::kParse, "color '" + s + "' is not #RRGGBB");
    out[c] = static_cast<float>(v) / 255.0f;
  }
  return out;
}

std::string to_hex(const Rgb& color) {
  char buf[8];
  int v[3];
  for (int c = 0; c < 3; ++c) v[c] = static_cast<int>(std::lround(std::clamp(color[c], 0.0f, 1.0f) * 255.0f));
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", v[0], v[1], v[2]);
  return buf;
}

Palette parse_palette(std::string_view text) {
  const std::string body = trim(text);
  if (!body.empty() && body[0] == '{') return parse_json_palette(body);
  Palette p;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    const std::string line = trim(text.substr(pos, end - pos));
    ++line_no;
    pos = end + 1;
    if (line.empty() || (line[0] == '#' && (line.size() == 1 || line[1] == ' '))) continue;
    if (line[0] == '#') {
      try {
        p.colors.push_back(parse_hex_color(line));
      } catch (const Error&) {
        line_error(line_no, "'" + line + "' is not #RRGGBB");
      }
    } else {
      p.colors.push_back(parse_decimal_line(line, line_no));
    }
    if (p.size() > Palette::kMaxColors) line_error(line_no, "more than 16 colors");
  }
  if (p.colors.empty()) fail(ErrorCode::kParse, "palette: no colors");
  return p;
}

std::string format_palette(const Palette& palette) {
  std::string out;
  char buf[64];
  for (const Rgb& c : palette.colors) {
    std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", c[0], c[1], c[2]);
    out += buf;
  }
  return out;
}

}  // namespace softseg
