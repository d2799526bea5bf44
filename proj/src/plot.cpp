#include "seki/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include <zlib.h>

#include "seki/common.hpp"

namespace seki {

namespace {

using Glyph = std::array<std::uint8_t, 7>;

const std::unordered_map<char, Glyph>& font() {
  static const std::unordered_map<char, Glyph> f{
      {' ', {0, 0, 0, 0, 0, 0, 0}},
      {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
      {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
      {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
      {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
      {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
      {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
      {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
      {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
      {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
      {'A', {0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11}},
      {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
      {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
      {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
      {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
      {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
      {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
      {'H', {0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
      {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
      {'J', {0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C}},
      {'K', {0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11}},
      {'L', {0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F}},
      {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
      {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
      {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'P', {0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10}},
      {'Q', {0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D}},
      {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
      {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
      {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'U', {0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
      {'V', {0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04}},
      {'W', {0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A}},
      {'X', {0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11}},
      {'Y', {0x11, 0x11, 0x11, 0x0A, 0x04, 0x04, 0x04}},
      {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
      {'.', {0, 0, 0, 0, 0, 0x0C, 0x0C}},
      {',', {0, 0, 0, 0, 0x0C, 0x04, 0x08}},
      {'-', {0, 0, 0, 0x1F, 0, 0, 0}},
      {'+', {0, 0x04, 0x04, 0x1F, 0x04, 0x04, 0}},
      {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
      {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
      {'[', {0x0E, 0x08, 0x08, 0x08, 0x08, 0x08, 0x0E}},
      {']', {0x0E, 0x02, 0x02, 0x02, 0x02, 0x02, 0x0E}},
      {':', {0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0}},
      {'/', {0, 0x01, 0x02, 0x04, 0x08, 0x10, 0}},
      {'=', {0, 0, 0x1F, 0, 0x1F, 0, 0}},
      {'_', {0, 0, 0, 0, 0, 0, 0x1F}},
      {'*', {0, 0x04, 0x15, 0x0E, 0x15, 0x04, 0}},
      {'^', {0x04, 0x0A, 0x11, 0, 0, 0, 0}},
      {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
      {'|', {0x04, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
      {'<', {0x02, 0x04, 0x08, 0x10, 0x08, 0x04, 0x02}},
      {'>', {0x08, 0x04, 0x02, 0x01, 0x02, 0x04, 0x08}},
      {'\'', {0x04, 0x04, 0x08, 0, 0, 0, 0}},
  };
  return f;
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<std::uint8_t>(v >> s));
}

void write_chunk(std::ofstream& os, const char* type, const std::vector<std::uint8_t>& data) {
  std::vector<std::uint8_t> buf;
  put_u32(buf, static_cast<std::uint32_t>(data.size()));
  const std::size_t type_at = buf.size();
  buf.insert(buf.end(), type, type + 4);
  buf.insert(buf.end(), data.begin(), data.end());
  const auto crc = crc32(0L, buf.data() + type_at, static_cast<uInt>(buf.size() - type_at));
  put_u32(buf, static_cast<std::uint32_t>(crc));
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

std::string format_tick(double v) {
  if (std::abs(v) < 1e-12) return "0";
  char b[32];
  std::snprintf(b, sizeof b, "%.3g", v);
  return b;
}

}  // namespace

Image::Image(int width, int height, Rgb background) : width_(width), height_(height) {
  require(width > 0 && height > 0, "image size must be positive");
  rgb_.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3);
  for (std::size_t i = 0; i < rgb_.size(); i += 3) std::copy(background.begin(), background.end(), rgb_.begin() + static_cast<long>(i));
}

Rgb Image::pixel(int x, int y) const {
  const auto i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) * 3;
  return {rgb_[i], rgb_[i + 1], rgb_[i + 2]};
}

void Image::set(int x, int y, Rgb c) {
  if (x < 0 || y < 0 || x >= width_ || y >= height_) return;
  const auto i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) + static_cast<std::size_t>(x)) * 3;
  rgb_[i] = c[0];
  rgb_[i + 1] = c[1];
  rgb_[i + 2] = c[2];
}

void Image::line(int x0, int y0, int x1, int y1, Rgb c) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (int guard = 0; guard < 100000; ++guard) {
    set(x0, y0, c);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void Image::fill_rect(int x0, int y0, int x1, int y1, Rgb c) {
  if (x0 > x1) std::swap(x0, x1);
  if (y0 > y1) std::swap(y0, y1);
  for (int y = std::max(y0, 0); y <= std::min(y1, height_ - 1); ++y)
    for (int x = std::max(x0, 0); x <= std::min(x1, width_ - 1); ++x) set(x, y, c);
}

int Image::text_width(const std::string& s, int scale) { return static_cast<int>(s.size()) * 6 * scale; }

void Image::text(int x, int y, const std::string& s, Rgb c, int scale) {
  const auto& f = font();
  for (char ch : s) {
    const char up = (ch >= 'a' && ch <= 'z') ? static_cast<char>(ch - 'a' + 'A') : ch;
    const auto it = f.find(up);
    const Glyph& g = it == f.end() ? f.at('*') : it->second;
    for (int r = 0; r < 7; ++r)
      for (int col = 0; col < 5; ++col)
        if (g[static_cast<std::size_t>(r)] & (0x10 >> col))
          fill_rect(x + col * scale, y + r * scale, x + col * scale + scale - 1, y + r * scale + scale - 1, c);
    x += 6 * scale;
  }
}

void Image::save_png(const std::filesystem::path& path) const {
  std::vector<std::uint8_t> raw;
  const std::size_t stride = static_cast<std::size_t>(width_) * 3;
  raw.reserve((stride + 1) * static_cast<std::size_t>(height_));
  for (int y = 0; y < height_; ++y) {
    raw.push_back(0);
    const auto* row = rgb_.data() + static_cast<std::size_t>(y) * stride;
    raw.insert(raw.end(), row, row + stride);
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> z(len);
  if (compress2(z.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw Error("PNG compression failed");
  z.resize(len);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  os.write(reinterpret_cast<const char*>(sig), 8);
  std::vector<std::uint8_t> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(width_));
  put_u32(ihdr, static_cast<std::uint32_t>(height_));
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
  write_chunk(os, "IHDR", ihdr);
  write_chunk(os, "IDAT", z);
  write_chunk(os, "IEND", {});
}

Rgb palette(std::size_t i) {
  static const Rgb colors[] = {{31, 119, 180}, {214, 39, 40}, {44, 160, 44},  {255, 127, 14},
                               {148, 103, 189}, {140, 86, 75}, {227, 119, 194}, {127, 127, 127}};
  return colors[i % 8];
}

std::vector<double> nice_ticks(double lo, double hi, int target) {
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / std::max(target, 1);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0})
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  std::vector<double> t;
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) t.push_back(v);
  return t;
}

Series& Figure::add(std::string label, std::vector<double> x, std::vector<double> y, Series::Style style) {
  require(x.size() == y.size(), "series x and y differ in length");
  Series s;
  s.label = std::move(label);
  s.x = std::move(x);
  s.y = std::move(y);
  s.style = style;
  s.color = palette(series.size());
  series.push_back(std::move(s));
  return series.back();
}

Image Figure::render(int width, int height) const {
  Image img(width, height);
  const int left = 72, right = width - 16, top = 30, bottom = height - 42;
  auto ty = [&](double v) { return log_y ? std::log10(std::max(v, 1e-300)) : v; };

  double xmin = kInf, xmax = -kInf, ymin = kInf, ymax = -kInf;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      const double v = ty(s.y[i]);
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
      if (s.style == Series::Style::Bars) ymin = std::min(ymin, 0.0);
    }
  if (!std::isfinite(xmin)) xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;
  if (xmax == xmin) xmin -= 0.5, xmax += 0.5;
  if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;
  double bar_half = 0.0;
  for (const auto& s : series)
    if (s.style == Series::Style::Bars && s.x.size() > 1) {
      double dmin = kInf;
      for (std::size_t i = 1; i < s.x.size(); ++i) dmin = std::min(dmin, std::abs(s.x[i] - s.x[i - 1]));
      bar_half = std::max(bar_half, 0.4 * dmin);
    }
  xmin -= bar_half;
  xmax += bar_half;

  auto px = [&](double x) { return left + static_cast<int>(std::lround((x - xmin) / (xmax - xmin) * (right - left))); };
  auto py = [&](double y) { return bottom - static_cast<int>(std::lround((y - ymin) / (ymax - ymin) * (bottom - top))); };
  const Rgb black{0, 0, 0}, grid{225, 225, 225};

  for (double t : nice_ticks(xmin, xmax)) {
    const int x = px(t);
    img.line(x, top, x, bottom, grid);
    img.line(x, bottom, x, bottom + 4, black);
    const std::string lab = format_tick(t);
    img.text(x - Image::text_width(lab) / 2, bottom + 8, lab, black);
  }
  for (double t : nice_ticks(ymin, ymax)) {
    const int y = py(t);
    img.line(left, y, right, y, grid);
    img.line(left - 4, y, left, y, black);
    const std::string lab = log_y ? "1E" + format_tick(t) : format_tick(t);
    img.text(left - 8 - Image::text_width(lab), y - 3, lab, black);
  }
  img.line(left, top, left, bottom, black);
  img.line(left, bottom, right, bottom, black);
  img.line(left, top, right, top, black);
  img.line(right, top, right, bottom, black);

  for (const auto& s : series) {
    int prev_x = 0, prev_y = 0;
    bool have_prev = false;
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) {
        have_prev = false;
        continue;
      }
      const int x = px(s.x[i]), y = py(ty(s.y[i]));
      switch (s.style) {
        case Series::Style::Line:
          if (have_prev) {
            img.line(prev_x, prev_y, x, y, s.color);
            img.line(prev_x, prev_y + 1, x, y + 1, s.color);
          }
          break;
        case Series::Style::Points:
          img.fill_rect(x - 2, y - 2, x + 2, y + 2, s.color);
          break;
        case Series::Style::Bars: {
          const int w = std::max(1, px(s.x[i] + bar_half) - x - 1);
          img.fill_rect(x - w, py(std::max(ymin, 0.0)), x + w, y, s.color);
          break;
        }
        case Series::Style::Steps:
          if (have_prev) {
            img.line(prev_x, prev_y, x, prev_y, s.color);
            img.line(x, prev_y, x, y, s.color);
          }
          break;
      }
      prev_x = x;
      prev_y = y;
      have_prev = true;
    }
  }

  img.text(left, 10, title, black);
  img.text((left + right - Image::text_width(xlabel)) / 2, height - 16, xlabel, black);
  int ly = top + 6;
  for (const auto& s : series) {
    if (s.label.empty()) continue;
    const int w = Image::text_width(s.label);
    img.fill_rect(right - w - 26, ly, right - w - 16, ly + 6, s.color);
    img.text(right - w - 10, ly, s.label, black);
    ly += 12;
  }
  // No rotated glyphs, so the y label sits top right of the frame.
  if (!ylabel.empty()) img.text(right - Image::text_width(ylabel), 10, ylabel, {90, 90, 90});
  return img;
}

void Figure::save_png(const std::filesystem::path& path, int width, int height) const {
  render(width, height).save_png(path);
}

}  // namespace seki
