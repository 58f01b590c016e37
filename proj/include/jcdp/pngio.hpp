#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "jcdp/data.hpp"

namespace jcdp {

// 8-bit RGB raster with a small built-in glyph set, enough for chart labels.
struct Canvas {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> px;

  Canvas(int w, int h, std::uint8_t r = 255, std::uint8_t g = 255, std::uint8_t b = 255);

  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  void fill_rect(int x, int y, int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  void line(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b);
  // 5x7 uppercase font, 6px advance; lowercase input is uppercased.
  void text(int x, int y, const std::string& s, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

void write_png(const std::filesystem::path& path, const Canvas& canvas);

struct Series {
  std::string name;
  std::vector<double> values;
};

void plot_lines(const std::filesystem::path& path, const std::string& title,
                const std::vector<Series>& series, const std::string& y_label = "");

void plot_bars(const std::filesystem::path& path, const std::string& title,
               const std::vector<std::string>& labels, const std::vector<double>& values);

// Tiled image sheet: up to `limit` images, `cols` per row, nearest-neighbor
// scaled by `scale`.
Canvas dataset_grid(const Dataset& ds, int cols = 16, int limit = 64, int scale = 2);

}  // namespace jcdp
