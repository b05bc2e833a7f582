#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "softseg/image.hpp"

namespace softseg {

/// K-means palette in RGB. Centers are ordered by descending cluster
/// population. When the image has fewer than k distinct colors the missing
/// centers duplicate existing ones (most populous first), has_duplicates is
/// set and a warning is emitted.
Palette extract_palette(const Image& image, int k, std::uint64_t seed);

/// One Lloyd step: assign every point to its nearest center (ties go to the
/// lowest index), then move centers to their cluster means. A center that
/// receives no points is re-seeded at the point farthest from its assigned
/// center.
std::vector<Rgb> kmeans_iterate(std::span<const Rgb> points, std::span<const Rgb> centers);

/// Sum of squared distances from each point to its nearest center.
double kmeans_objective(std::span<const Rgb> points, std::span<const Rgb> centers);

/// Palette text: one color per line, "#RRGGBB" or "r,g,b" with reals in
/// [0,1]. Blank lines and lines starting with '#' followed by a space are
/// skipped. A JSON document {"colors": [[r,g,b], ...]} is accepted too.
/// Errors name the offending line.
Palette parse_palette(std::string_view text);

/// Decimal "r,g,b" lines that parse back to the same floats.
std::string format_palette(const Palette& palette);
std::string to_hex(const Rgb& color);
Rgb parse_hex_color(std::string_view text);

}  // namespace softseg
