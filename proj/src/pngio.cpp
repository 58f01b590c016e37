#include "jcdp/pngio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <zlib.h>

namespace jcdp {

namespace {

struct Glyph {
  char c;
  std::uint8_t rows[7];
};

constexpr Glyph kFont[] = {
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
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
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
    {'N', {0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11}},
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
    {'Y', {0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04}},
    {'Z', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F}},
    {' ', {0, 0, 0, 0, 0, 0, 0}},
    {'.', {0, 0, 0, 0, 0, 0x0C, 0x0C}},
    {',', {0, 0, 0, 0, 0x0C, 0x04, 0x08}},
    {'-', {0, 0, 0, 0x1F, 0, 0, 0}},
    {':', {0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0}},
    {'_', {0, 0, 0, 0, 0, 0, 0x1F}},
    {'/', {0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10}},
    {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
    {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},
    {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
    {'+', {0x00, 0x04, 0x04, 0x1F, 0x04, 0x04, 0x00}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    {'[', {0x0E, 0x08, 0x08, 0x08, 0x08, 0x08, 0x0E}},
    {']', {0x0E, 0x02, 0x02, 0x02, 0x02, 0x02, 0x0E}},
};

const std::uint8_t* glyph_rows(char c) {
  static constexpr std::uint8_t kBox[7] = {0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F};
  const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  for (const Glyph& g : kFont) {
    if (g.c == up) return g.rows;
  }
  return kBox;
}

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& data) {
  put_u32_be(out, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_from = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  const auto crc = crc32(0L, out.data() + crc_from, static_cast<uInt>(out.size() - crc_from));
  put_u32_be(out, static_cast<std::uint32_t>(crc));
}

std::string fmt_tick(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

constexpr std::uint8_t kPalette[6][3] = {{31, 119, 180}, {214, 39, 40},  {44, 160, 44},
                                         {148, 103, 189}, {255, 127, 14}, {23, 190, 207}};

}  // namespace

Canvas::Canvas(int w, int h, std::uint8_t r, std::uint8_t g, std::uint8_t b)
    : width(w), height(h) {
  if (w < 1 || h < 1) throw std::invalid_argument("canvas size must be positive");
  px.resize(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < px.size(); i += 3) {
    px[i] = r;
    px[i + 1] = g;
    px[i + 2] = b;
  }
}

void Canvas::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
  px[i] = r;
  px[i + 1] = g;
  px[i + 2] = b;
}

void Canvas::fill_rect(int x, int y, int w, int h, std::uint8_t r, std::uint8_t g,
                       std::uint8_t b) {
  for (int yy = y; yy < y + h; ++yy) {
    for (int xx = x; xx < x + w; ++xx) set(xx, yy, r, g, b);
  }
}

void Canvas::line(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g,
                  std::uint8_t b) {
  const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
  const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    set(x0, y0, r, g, b);
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

void Canvas::text(int x, int y, const std::string& s, std::uint8_t r, std::uint8_t g,
                  std::uint8_t b) {
  for (char c : s) {
    const std::uint8_t* rows = glyph_rows(c);
    for (int ry = 0; ry < 7; ++ry) {
      for (int rx = 0; rx < 5; ++rx) {
        if (rows[ry] & (0x10 >> rx)) set(x + rx, y + ry, r, g, b);
      }
    }
    x += 6;
  }
}

void write_png(const std::filesystem::path& path, const Canvas& canvas) {
  std::vector<std::uint8_t> raw;
  raw.reserve(static_cast<std::size_t>(canvas.height) * (canvas.width * 3 + 1));
  for (int y = 0; y < canvas.height; ++y) {
    raw.push_back(0);  // filter: none
    const std::uint8_t* row = canvas.px.data() + static_cast<std::size_t>(y) * canvas.width * 3;
    raw.insert(raw.end(), row, row + canvas.width * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<std::uint8_t> deflated(bound);
  if (compress2(deflated.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK) {
    throw std::runtime_error("png deflate failed");
  }
  deflated.resize(bound);

  std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  std::vector<std::uint8_t> ihdr;
  put_u32_be(ihdr, static_cast<std::uint32_t>(canvas.width));
  put_u32_be(ihdr, static_cast<std::uint32_t>(canvas.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", deflated);
  put_chunk(out, "IEND", {});

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void plot_lines(const std::filesystem::path& path, const std::string& title,
                const std::vector<Series>& series, const std::string& y_label) {
  constexpr int W = 640, H = 400, L = 56, R = 16, T = 28, B = 32;
  Canvas c(W, H);
  c.text(L, 10, title, 0, 0, 0);
  if (!y_label.empty()) c.text(4, T - 10, y_label, 90, 90, 90);

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::size_t longest = 0;
  for (const Series& s : series) {
    longest = std::max(longest, s.values.size());
    for (double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (longest == 0) {
    lo = 0.0;
    hi = 1.0;
  }
  if (hi - lo < 1e-12) {
    hi += 0.5;
    lo -= 0.5;
  }
  const double pad = 0.05 * (hi - lo);
  lo -= pad;
  hi += pad;

  const int x0 = L, x1 = W - R, y0 = H - B, y1 = T;
  auto map_x = [&](std::size_t i) {
    const double f = longest > 1 ? static_cast<double>(i) / (longest - 1) : 0.5;
    return x0 + static_cast<int>(std::lround(f * (x1 - x0)));
  };
  auto map_y = [&](double v) {
    return y0 - static_cast<int>(std::lround((v - lo) / (hi - lo) * (y0 - y1)));
  };

  c.line(x0, y0, x1, y0, 0, 0, 0);
  c.line(x0, y0, x0, y1, 0, 0, 0);
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    const int y = map_y(v);
    c.line(x0 - 3, y, x0, y, 0, 0, 0);
    c.text(4, y - 3, fmt_tick(v), 60, 60, 60);
  }
  if (longest > 1) {
    for (int k = 0; k <= 4; ++k) {
      const std::size_t i = (longest - 1) * k / 4;
      const int x = map_x(i);
      c.line(x, y0, x, y0 + 3, 0, 0, 0);
      c.text(x - 3, y0 + 6, std::to_string(i), 60, 60, 60);
    }
  }

  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& pal = kPalette[si % 6];
    const auto& vals = series[si].values;
    for (std::size_t i = 1; i < vals.size(); ++i) {
      c.line(map_x(i - 1), map_y(vals[i - 1]), map_x(i), map_y(vals[i]), pal[0], pal[1], pal[2]);
    }
    if (vals.size() == 1) c.fill_rect(map_x(0) - 1, map_y(vals[0]) - 1, 3, 3, pal[0], pal[1], pal[2]);
    const int ly = y1 + 4 + static_cast<int>(si) * 10;
    c.fill_rect(x1 - 120, ly, 8, 8, pal[0], pal[1], pal[2]);
    c.text(x1 - 108, ly, series[si].name, 0, 0, 0);
  }
  write_png(path, c);
}

void plot_bars(const std::filesystem::path& path, const std::string& title,
               const std::vector<std::string>& labels, const std::vector<double>& values) {
  if (labels.size() != values.size()) throw std::invalid_argument("labels/values size mismatch");
  constexpr int W = 640, H = 400, L = 56, R = 16, T = 28, B = 44;
  Canvas c(W, H);
  c.text(L, 10, title, 0, 0, 0);

  double hi = 0.0, lo = 0.0;
  for (double v : values) {
    hi = std::max(hi, v);
    lo = std::min(lo, v);
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;

  const int x0 = L, x1 = W - R, y0 = H - B, y1 = T;
  auto map_y = [&](double v) {
    return y0 - static_cast<int>(std::lround((v - lo) / (hi - lo) * (y0 - y1)));
  };
  c.line(x0, y0, x1, y0, 0, 0, 0);
  c.line(x0, y0, x0, y1, 0, 0, 0);
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    const int y = map_y(v);
    c.line(x0 - 3, y, x0, y, 0, 0, 0);
    c.text(4, y - 3, fmt_tick(v), 60, 60, 60);
  }

  const int n = static_cast<int>(values.size());
  if (n > 0) {
    const int span = (x1 - x0) / n;
    const int bw = std::max(6, span * 3 / 5);
    for (int i = 0; i < n; ++i) {
      const auto& pal = kPalette[i % 6];
      const int cx = x0 + span * i + span / 2;
      const int top = map_y(std::max(0.0, values[i]));
      const int bot = map_y(std::min(0.0, values[i]));
      c.fill_rect(cx - bw / 2, top, bw, std::max(1, bot - top), pal[0], pal[1], pal[2]);
      c.text(cx - static_cast<int>(fmt_tick(values[i]).size()) * 3, top - 10,
             fmt_tick(values[i]), 0, 0, 0);
      std::string lab = labels[static_cast<std::size_t>(i)];
      if (static_cast<int>(lab.size()) * 6 > span) {
        lab = lab.substr(0, std::max(1, span / 6));
      }
      c.text(cx - static_cast<int>(lab.size()) * 3, y0 + 8, lab, 0, 0, 0);
    }
  }
  write_png(path, c);
}

Canvas dataset_grid(const Dataset& ds, int cols, int limit, int scale) {
  if (ds.size() == 0) throw std::invalid_argument("empty dataset");
  if (cols < 1 || limit < 1 || scale < 1) throw std::invalid_argument("bad grid geometry");
  const int n = static_cast<int>(std::min<std::int64_t>(ds.size(), limit));
  const int ch = static_cast<int>(ds.images.dim(1));
  const int s = static_cast<int>(ds.images.dim(2));
  const int gcols = std::min(cols, n);
  const int grows = (n + gcols - 1) / gcols;
  const int cell = s * scale + 2;
  Canvas c(gcols * cell + 2, grows * cell + 2, 240, 240, 240);
  const std::int64_t per = ds.images.numel() / ds.size();
  for (int i = 0; i < n; ++i) {
    const float* img = ds.images.ptr() + i * per;
    const int ox = 2 + (i % gcols) * cell;
    const int oy = 2 + (i / gcols) * cell;
    for (int y = 0; y < s * scale; ++y) {
      for (int x = 0; x < s * scale; ++x) {
        const int sy = y / scale, sx = x / scale;
        auto sample = [&](int chan) {
          const float v = img[(chan * s + sy) * s + sx];
          return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
        };
        const std::uint8_t r = sample(0);
        const std::uint8_t g = ch > 1 ? sample(1) : r;
        const std::uint8_t b = ch > 2 ? sample(2) : r;
        c.set(ox + x, oy + y, r, g, b);
      }
    }
  }
  return c;
}

}  // namespace jcdp
