#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "rankcount/density.hpp"
#include "rankcount/image.hpp"
#include "rankcount/rankgen.hpp"
#include "rankcount/rng.hpp"
#include "rankcount/tensor.hpp"

namespace rankcount {

struct SceneParams {
  int width = 256;
  int height = 256;
  int min_count = 0;
  int max_count = 100;
  double blob_radius_min = 3.0;
  double blob_radius_max = 9.0;
  double blob_amplitude_min = 0.25;
  double blob_amplitude_max = 0.5;
  /// Background texture amplitude (coarse octave); the fine octave is a
  /// quarter of it. The texture mean is 0.5, and blob splats are signed, so
  /// the scene mean carries no count information.
  double clutter = 0.15;
  /// When set, point density increases toward the top of the scene.
  bool vertical_gradient = false;
};

struct SyntheticScene {
  Image image;
  PointAnnotation annotation;
};

/// Scatters a uniform random number of points in [min_count, max_count],
/// renders each as a signed Gaussian splat over a two-octave value-noise
/// background. Deterministic given the rng state.
SyntheticScene generate_scene(const SceneParams& params, Rng& rng);

/// Convenience: n scenes with ids "scene_0000"... using one derived rng
/// stream per index.
std::vector<SyntheticScene> generate_corpus(const SceneParams& params, int n,
                                            std::uint64_t seed,
                                            const std::string& id_prefix = "scene");

// --- Labeled patch sampling ---------------------------------------------------

struct PatchSamplerConfig {
  int input_size = 224;
  int output_stride = 16;
  /// Gaussian std for ground-truth rendering, in network-input pixels.
  double sigma_px = 15.0;
  int min_side = 56;
  int max_side = 448;
  /// Uniform over integer sides by default; log-uniform when set.
  bool log_uniform = false;

  int gt_cells() const { return input_size / output_stride; }
};

struct LabeledPatch {
  Image image;  // input_size x input_size, values in [0,1]
  DensityMap gt;
  int true_count = 0;  // exact point count inside the source rect
  Rect source_rect;
};

/// Draws a square side uniformly from [min_side, min(max_side, min(W,H))] and
/// a uniform valid position, then resizes the crop to the network input size.
/// Ground truth is rendered from the cropped (rescaled) points at the output
/// resolution, so the patch's point count is preserved exactly by resizing.
LabeledPatch sample_labeled_patch(const SyntheticScene& scene,
                                  const PatchSamplerConfig& config, Rng& rng);

// --- Image stores --------------------------------------------------------------

class ImageStore {
 public:
  virtual ~ImageStore() = default;
  virtual const Image& get(const std::string& image_id) const = 0;
};

/// Serves <dir>/<image-id>.pgm with caching.
class DirImageStore : public ImageStore {
 public:
  explicit DirImageStore(std::filesystem::path dir) : dir_(std::move(dir)) {}
  const Image& get(const std::string& image_id) const override;

 private:
  std::filesystem::path dir_;
  mutable std::unordered_map<std::string, Image> cache_;
};

class MemoryImageStore : public ImageStore {
 public:
  void put(std::string image_id, Image image);
  const Image& get(const std::string& image_id) const override;

 private:
  std::unordered_map<std::string, Image> images_;
};

// --- Minibatch assembly ---------------------------------------------------------

enum class BatchKind { counting, ranking, mixed };

const char* to_string(BatchKind kind);

/// One training minibatch. The counting partition occupies rows
/// [0, counting_rows); ranking rows follow, and pair indices address batch
/// rows directly.
struct Minibatch {
  BatchKind kind = BatchKind::counting;
  ag::Tensor images;  // [B,1,in,in]
  std::vector<DensityMap> gt;
  PairSet pairs;
  int counting_rows = 0;
  std::vector<int> true_counts;  // per counting row
  int rows() const { return images.dim(0); }
};

struct DataSources {
  const std::vector<SyntheticScene>* labeled = nullptr;
  const std::vector<RankedChain>* chains = nullptr;
  const ImageStore* chain_images = nullptr;
};

struct BatchConfig {
  /// Labeled patches per counting batch (also the counting partition of a
  /// mixed batch).
  int counting_batch = 25;
  /// Chains per ranking batch; with k=5 this yields 25 ranking rows and 50
  /// pairs.
  int ranking_sets = 5;
  PatchSamplerConfig patch;
};

/// Pure function of (kind, sources, config, rng state). Counting rows of a
/// mixed batch are drawn before ranking rows, so the counting partition of a
/// mixed batch equals the counting batch drawn from the same rng state.
Minibatch assemble_batch(BatchKind kind, const DataSources& sources,
                         const BatchConfig& config, Rng& rng);

// --- Corpus on disk --------------------------------------------------------------

/// Writes <dir>/<id>.pgm for every scene plus <dir>/annotations.jsonl.
void save_corpus(const std::filesystem::path& dir,
                 std::span<const SyntheticScene> scenes);
/// Loads a labeled corpus saved by save_corpus (or by any producer of the
/// same layout).
std::vector<SyntheticScene> load_corpus(const std::filesystem::path& dir);
/// Image ids (sorted) and sizes of all .pgm files in a directory; for chain
/// generation no pixel data is needed.
struct CorpusEntry {
  std::string image_id;
  int width = 0;
  int height = 0;
};
std::vector<CorpusEntry> scan_corpus(const std::filesystem::path& dir);

inline constexpr const char* kAnnotationsFile = "annotations.jsonl";

}  // namespace rankcount
