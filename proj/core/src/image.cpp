#include "rankcount/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace rankcount {

namespace {

int next_pgm_int(std::istream& in, const std::string& path) {
  // Skips whitespace and '#' comment lines between header tokens.
  while (true) {
    int c = in.peek();
    if (c == EOF) throw std::runtime_error("truncated PGM header: " + path);
    if (std::isspace(c)) {
      in.get();
    } else if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else {
      break;
    }
  }
  int value = 0;
  if (!(in >> value)) throw std::runtime_error("malformed PGM header: " + path);
  return value;
}

}  // namespace

Image Image::filled(int width, int height, double value) {
  Image img;
  img.width = width;
  img.height = height;
  img.pixels.assign(static_cast<std::size_t>(width) * height, value);
  return img;
}

Image load_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path.string());
  char p = 0, kind = 0;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '5' && kind != '2')) {
    throw std::runtime_error("unsupported image format (want PGM P5/P2): " + path.string());
  }
  const int width = next_pgm_int(in, path.string());
  const int height = next_pgm_int(in, path.string());
  const int maxval = next_pgm_int(in, path.string());
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255) {
    throw std::runtime_error("unsupported PGM geometry/depth: " + path.string());
  }
  Image img;
  img.width = width;
  img.height = height;
  img.pixels.resize(static_cast<std::size_t>(width) * height);
  const double inv = 1.0 / maxval;
  if (kind == '5') {
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(img.pixels.size());
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size()) {
      throw std::runtime_error("truncated PGM data: " + path.string());
    }
    for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] * inv;
  } else {
    for (auto& px : img.pixels) {
      int v;
      if (!(in >> v)) throw std::runtime_error("truncated PGM data: " + path.string());
      px = v * inv;
    }
  }
  return img;
}

void save_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  std::vector<unsigned char> raw(img.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double v = std::clamp(img.pixels[i], 0.0, 1.0);
    raw[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void read_pgm_size(const std::filesystem::path& path, int& width, int& height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image: " + path.string());
  char p = 0, kind = 0;
  in.get(p);
  in.get(kind);
  if (p != 'P' || (kind != '5' && kind != '2')) {
    throw std::runtime_error("unsupported image format (want PGM P5/P2): " + path.string());
  }
  width = next_pgm_int(in, path.string());
  height = next_pgm_int(in, path.string());
}

Image crop(const Image& img, const Rect& rect) {
  if (rect.w <= 0 || rect.h <= 0) throw std::runtime_error("crop: degenerate rect");
  if (rect.x < 0 || rect.y < 0 || rect.x + rect.w > img.width || rect.y + rect.h > img.height) {
    throw std::runtime_error("crop: rect outside image bounds");
  }
  Image out;
  out.width = rect.w;
  out.height = rect.h;
  out.pixels.resize(static_cast<std::size_t>(rect.w) * rect.h);
  for (int y = 0; y < rect.h; ++y) {
    const double* src = img.pixels.data() + static_cast<std::size_t>(rect.y + y) * img.width + rect.x;
    std::copy(src, src + rect.w, out.pixels.data() + static_cast<std::size_t>(y) * rect.w);
  }
  return out;
}

Image resize_bilinear(const Image& img, int out_width, int out_height) {
  if (out_width <= 0 || out_height <= 0) throw std::runtime_error("resize: non-positive size");
  Image out;
  out.width = out_width;
  out.height = out_height;
  out.pixels.resize(static_cast<std::size_t>(out_width) * out_height);
  const double sx = static_cast<double>(img.width) / out_width;
  const double sy = static_cast<double>(img.height) / out_height;
  for (int oy = 0; oy < out_height; ++oy) {
    const double fy = (oy + 0.5) * sy - 0.5;
    const int y0 = std::clamp(static_cast<int>(std::floor(fy)), 0, img.height - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int ox = 0; ox < out_width; ++ox) {
      const double fx = (ox + 0.5) * sx - 0.5;
      const int x0 = std::clamp(static_cast<int>(std::floor(fx)), 0, img.width - 1);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = std::clamp(fx - x0, 0.0, 1.0);
      const double top = img.at(x0, y0) * (1.0 - wx) + img.at(x1, y0) * wx;
      const double bottom = img.at(x0, y1) * (1.0 - wx) + img.at(x1, y1) * wx;
      out.pixels[static_cast<std::size_t>(oy) * out_width + ox] =
          top * (1.0 - wy) + bottom * wy;
    }
  }
  return out;
}

}  // namespace rankcount
