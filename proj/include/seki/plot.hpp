#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace seki {

using Rgb = std::array<std::uint8_t, 3>;

/// 8-bit RGB image written as a zlib-compressed PNG.
class Image {
 public:
  Image(int width, int height, Rgb background = {255, 255, 255});

  [[nodiscard]] int width() const noexcept { return width_; }
  [[nodiscard]] int height() const noexcept { return height_; }
  [[nodiscard]] Rgb pixel(int x, int y) const;
  void set(int x, int y, Rgb c);
  void line(int x0, int y0, int x1, int y1, Rgb c);
  void fill_rect(int x0, int y0, int x1, int y1, Rgb c);
  /// 5x7 bitmap font, lower case drawn as upper case; `scale` multiplies the glyph size.
  void text(int x, int y, const std::string& s, Rgb c, int scale = 1);
  [[nodiscard]] static int text_width(const std::string& s, int scale = 1);
  void save_png(const std::filesystem::path& path) const;

 private:
  int width_, height_;
  std::vector<std::uint8_t> rgb_;
};

struct Series {
  enum class Style { Line, Points, Bars, Steps };
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  Style style = Style::Line;
  Rgb color{31, 119, 180};
};

/// Single-panel chart with linear axes, ticks and a legend.
struct Figure {
  std::string title;
  std::string xlabel;
  std::string ylabel;
  std::vector<Series> series;
  bool log_y = false;

  Series& add(std::string label, std::vector<double> x, std::vector<double> y,
              Series::Style style = Series::Style::Line);
  [[nodiscard]] Image render(int width = 720, int height = 460) const;
  void save_png(const std::filesystem::path& path, int width = 720, int height = 460) const;
};

[[nodiscard]] Rgb palette(std::size_t i);

/// Evenly spaced ticks covering [lo, hi] with 1-2-5 steps.
[[nodiscard]] std::vector<double> nice_ticks(double lo, double hi, int target = 6);

}  // namespace seki
