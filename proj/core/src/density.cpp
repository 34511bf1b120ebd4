#include "rankcount/density.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

#include "rankcount/checkpoint.hpp"
#include "rankcount/image.hpp"

namespace rankcount {

void PointAnnotation::validate() const {
  for (const auto& p : points) {
    if (!(p.x >= 0.0 && p.x < width && p.y >= 0.0 && p.y < height)) {
      throw std::runtime_error("annotation '" + image_id + "' has point (" +
                               std::to_string(p.x) + ", " + std::to_string(p.y) +
                               ") outside image " + std::to_string(width) + "x" +
                               std::to_string(height));
    }
  }
}

DensityMap render_density(const PointAnnotation& ann, double sigma_px, int out_rows,
                          int out_cols) {
  if (sigma_px <= 0.0) throw std::runtime_error("render_density: sigma must be > 0");
  if (out_rows < 1 || out_cols < 1) {
    throw std::runtime_error("render_density: output size must be at least 1x1");
  }
  const double scale_x = static_cast<double>(ann.width) / out_cols;
  const double scale_y = static_cast<double>(ann.height) / out_rows;
  if (std::abs(scale_x - scale_y) > 1e-9 * std::max(scale_x, scale_y)) {
    throw std::runtime_error("render_density: output grid must preserve the image aspect ratio");
  }
  const double scale = scale_x;

  DensityMap map;
  map.rows = out_rows;
  map.cols = out_cols;
  map.cell_px = scale;
  map.cells.assign(static_cast<std::size_t>(out_rows) * out_cols, 0.0);

  const double sigma_cells = sigma_px / scale;
  const double support = 4.0 * sigma_cells;
  const double cell_area = 1.0;  // in cell units; the 1/(2*pi*sigma^2) below is per cell^2
  const double norm = cell_area / (2.0 * std::numbers::pi * sigma_cells * sigma_cells);
  const double inv_two_sigma_sq = 1.0 / (2.0 * sigma_cells * sigma_cells);

  for (const auto& p : ann.points) {
    // Cell-center coordinates of the point.
    const double cx = p.x / scale - 0.5;
    const double cy = p.y / scale - 0.5;
    const int c0 = std::max(0, static_cast<int>(std::ceil(cx - support)));
    const int c1 = std::min(out_cols - 1, static_cast<int>(std::floor(cx + support)));
    const int r0 = std::max(0, static_cast<int>(std::ceil(cy - support)));
    const int r1 = std::min(out_rows - 1, static_cast<int>(std::floor(cy + support)));
    for (int r = r0; r <= r1; ++r) {
      const double dy = r - cy;
      for (int c = c0; c <= c1; ++c) {
        const double dx = c - cx;
        map.at(r, c) += norm * std::exp(-(dx * dx + dy * dy) * inv_two_sigma_sq);
      }
    }
  }
  return map;
}

double count_from_density(const DensityMap& d) {
  double acc = 0.0;
  for (double v : d.cells) acc += v;
  return acc;
}

PointAnnotation crop_annotation(const PointAnnotation& ann, const Rect& rect) {
  if (rect.w <= 0 || rect.h <= 0) {
    throw std::runtime_error("crop_annotation: degenerate rect for '" + ann.image_id + "'");
  }
  if (rect.x < 0 || rect.y < 0 || rect.x + rect.w > ann.width || rect.y + rect.h > ann.height) {
    throw std::runtime_error("crop_annotation: rect outside image bounds for '" +
                             ann.image_id + "'");
  }
  PointAnnotation out;
  out.image_id = ann.image_id;
  out.width = rect.w;
  out.height = rect.h;
  for (const auto& p : ann.points) {
    if (rect.contains(p)) out.points.push_back({p.x - rect.x, p.y - rect.y});
  }
  return out;
}

std::vector<PointAnnotation> load_annotations(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open annotation file: " + path.string());
  std::vector<PointAnnotation> result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": bad annotation record: " + e.what());
    }
    PointAnnotation ann;
    ann.image_id = j.at("image-id").get<std::string>();
    ann.width = j.at("width").get<int>();
    ann.height = j.at("height").get<int>();
    for (const auto& pt : j.at("points")) {
      ann.points.push_back({pt.at(0).get<double>(), pt.at(1).get<double>()});
    }
    ann.validate();  // out-of-bounds points are rejected at load time
    result.push_back(std::move(ann));
  }
  return result;
}

void save_annotations(const std::filesystem::path& path,
                      std::span<const PointAnnotation> annotations) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& ann : annotations) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : ann.points) pts.push_back({p.x, p.y});
    nlohmann::json j{{"image-id", ann.image_id},
                     {"width", ann.width},
                     {"height", ann.height},
                     {"points", std::move(pts)}};
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void save_density_pgm(const std::filesystem::path& path, const DensityMap& d) {
  Image img;
  img.width = d.cols;
  img.height = d.rows;
  img.pixels.resize(d.cells.size());
  const double peak = *std::max_element(d.cells.begin(), d.cells.end());
  const double inv = peak > 0.0 ? 1.0 / peak : 0.0;
  for (std::size_t i = 0; i < d.cells.size(); ++i) img.pixels[i] = d.cells[i] * inv;
  save_pgm(path, img);
}

void save_density_tensor(const std::filesystem::path& path, const DensityMap& d) {
  TensorEntry entry;
  entry.name = "density";
  entry.shape = {d.rows, d.cols};
  entry.values = d.cells;
  const std::string meta = "cell_px=" + std::to_string(d.cell_px);
  save_tensor_file(path, meta, std::span<const TensorEntry>(&entry, 1));
}

DensityMap load_density_tensor(const std::filesystem::path& path) {
  const TensorFile file = load_tensor_file(path);
  const TensorEntry* entry = file.find("density");
  if (!entry || entry->shape.size() != 2) {
    throw std::runtime_error("not a density tensor file: " + path.string());
  }
  DensityMap d;
  d.rows = entry->shape[0];
  d.cols = entry->shape[1];
  d.cells = entry->values;
  if (file.meta.rfind("cell_px=", 0) == 0) d.cell_px = std::stod(file.meta.substr(8));
  return d;
}

}  // namespace rankcount
