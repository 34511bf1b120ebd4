#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rankcount/geometry.hpp"

namespace rankcount {

/// Head-center coordinates for one image.
struct PointAnnotation {
  std::string image_id;
  int width = 0;
  int height = 0;
  std::vector<Point> points;

  int count() const { return static_cast<int>(points.size()); }
  /// Throws if any point lies outside the image bounds.
  void validate() const;
};

/// 2-D grid of non-negative person density. scale is source pixels per cell
/// (identical on both axes).
struct DensityMap {
  int rows = 0;
  int cols = 0;
  double cell_px = 1.0;
  std::vector<double> cells;

  double at(int r, int c) const { return cells[static_cast<std::size_t>(r) * cols + c]; }
  double& at(int r, int c) { return cells[static_cast<std::size_t>(r) * cols + c]; }
};

/// Renders the annotation as a sum of discretized isotropic Gaussians
/// (std sigma_px source pixels, truncated at 4 sigma, evaluated at cell
/// centers times cell area). The map has out_rows x out_cols cells covering
/// the full image; width/out_cols must equal height/out_rows. Gaussians are
/// clipped at the map border without renormalization, so the sum is slightly
/// below the point count when supports cross the border.
DensityMap render_density(const PointAnnotation& ann, double sigma_px, int out_rows,
                          int out_cols);

/// Sum over all cells; the count estimate for the covered region.
double count_from_density(const DensityMap& d);

/// Keeps the points falling inside rect (half-open far edges) rebased to the
/// rect origin. rect must lie within the image and have positive area.
PointAnnotation crop_annotation(const PointAnnotation& ann, const Rect& rect);

// --- External formats --------------------------------------------------------

/// JSON-lines, one record per image:
///   {"image-id": ..., "width": ..., "height": ..., "points": [[x,y],...]}
std::vector<PointAnnotation> load_annotations(const std::filesystem::path& path);
void save_annotations(const std::filesystem::path& path,
                      std::span<const PointAnnotation> annotations);

/// Max-normalized 8-bit PGM visualization.
void save_density_pgm(const std::filesystem::path& path, const DensityMap& d);
/// Tensor-container export/import (see checkpoint.hpp for the layout).
void save_density_tensor(const std::filesystem::path& path, const DensityMap& d);
DensityMap load_density_tensor(const std::filesystem::path& path);

}  // namespace rankcount
