#include "rankcount/data.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rankcount {

namespace {

/// Bilinearly interpolated lattice of uniform noise in [-amp, amp].
void add_value_noise(Image& img, int spacing, double amp, Rng& rng) {
  const int gw = img.width / spacing + 2;
  const int gh = img.height / spacing + 2;
  std::vector<double> lattice(static_cast<std::size_t>(gw) * gh);
  for (auto& v : lattice) v = rng.uniform(-amp, amp);
  for (int y = 0; y < img.height; ++y) {
    const double fy = static_cast<double>(y) / spacing;
    const int y0 = static_cast<int>(fy);
    const double wy = fy - y0;
    for (int x = 0; x < img.width; ++x) {
      const double fx = static_cast<double>(x) / spacing;
      const int x0 = static_cast<int>(fx);
      const double wx = fx - x0;
      const double* row0 = lattice.data() + static_cast<std::size_t>(y0) * gw;
      const double* row1 = row0 + gw;
      const double top = row0[x0] * (1.0 - wx) + row0[x0 + 1] * wx;
      const double bottom = row1[x0] * (1.0 - wx) + row1[x0 + 1] * wx;
      img.at(x, y) += top * (1.0 - wy) + bottom * wy;
    }
  }
}

double sample_vertical_position(int height, Rng& rng) {
  // Linear density 1.5 at the top tapering to 0.5 at the bottom;
  // inverse CDF of f(t) = 1.5 - t gives t = (3 - sqrt(9 - 8u)) / 2.
  const double u = rng.uniform();
  const double t = (3.0 - std::sqrt(9.0 - 8.0 * u)) / 2.0;
  return t * height;
}

}  // namespace

SyntheticScene generate_scene(const SceneParams& params, Rng& rng) {
  if (params.min_count < 0 || params.max_count > 5000 || params.min_count > params.max_count) {
    throw std::runtime_error("scene count range must lie in [0, 5000]");
  }
  if (params.width < 1 || params.height < 1) {
    throw std::runtime_error("scene size must be positive");
  }

  SyntheticScene scene;
  scene.image = Image::filled(params.width, params.height, 0.5);
  add_value_noise(scene.image, std::max(8, params.width / 8), params.clutter, rng);
  add_value_noise(scene.image, 8, params.clutter * 0.25, rng);

  const int count = static_cast<int>(rng.uniform_int(params.min_count, params.max_count));
  scene.annotation.width = params.width;
  scene.annotation.height = params.height;
  scene.annotation.points.reserve(static_cast<std::size_t>(count));

  for (int i = 0; i < count; ++i) {
    const double px = rng.uniform(0.0, params.width);
    const double py = params.vertical_gradient ? sample_vertical_position(params.height, rng)
                                               : rng.uniform(0.0, params.height);
    scene.annotation.points.push_back({px, py});

    const double radius = rng.uniform(params.blob_radius_min, params.blob_radius_max);
    const double amp = rng.uniform(params.blob_amplitude_min, params.blob_amplitude_max) *
                       (rng.uniform() < 0.5 ? -1.0 : 1.0);
    const double sigma = radius / 2.0;
    const double inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    const int x0 = std::max(0, static_cast<int>(std::floor(px - 1.5 * radius)));
    const int x1 = std::min(params.width - 1, static_cast<int>(std::ceil(px + 1.5 * radius)));
    const int y0 = std::max(0, static_cast<int>(std::floor(py - 1.5 * radius)));
    const int y1 = std::min(params.height - 1, static_cast<int>(std::ceil(py + 1.5 * radius)));
    for (int y = y0; y <= y1; ++y) {
      const double dy = (y + 0.5) - py;
      for (int x = x0; x <= x1; ++x) {
        const double dx = (x + 0.5) - px;
        scene.image.at(x, y) += amp * std::exp(-(dx * dx + dy * dy) * inv_two_sigma_sq);
      }
    }
  }

  for (auto& v : scene.image.pixels) v = std::clamp(v, 0.0, 1.0);
  scene.annotation.validate();
  return scene;
}

std::vector<SyntheticScene> generate_corpus(const SceneParams& params, int n,
                                            std::uint64_t seed, const std::string& id_prefix) {
  std::vector<SyntheticScene> scenes;
  scenes.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = Rng::stream(seed, "scene", static_cast<std::uint64_t>(i));
    SyntheticScene scene = generate_scene(params, rng);
    char id[32];
    std::snprintf(id, sizeof(id), "%s_%04d", id_prefix.c_str(), i);
    scene.annotation.image_id = id;
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

LabeledPatch sample_labeled_patch(const SyntheticScene& scene,
                                  const PatchSamplerConfig& config, Rng& rng) {
  const int w = scene.image.width;
  const int h = scene.image.height;
  const int max_side = std::min(config.max_side, std::min(w, h));
  if (max_side < config.min_side) {
    throw std::runtime_error("scene '" + scene.annotation.image_id + "' is " +
                             std::to_string(w) + "x" + std::to_string(h) +
                             ", smaller than the minimum patch side " +
                             std::to_string(config.min_side));
  }
  if (config.input_size % config.output_stride != 0) {
    throw std::runtime_error("patch sampler: input size must be a stride multiple");
  }

  int side;
  if (config.log_uniform) {
    const double lo = std::log(static_cast<double>(config.min_side));
    const double hi = std::log(static_cast<double>(max_side));
    side = std::clamp(static_cast<int>(std::lround(std::exp(rng.uniform(lo, hi)))),
                      config.min_side, max_side);
  } else {
    side = static_cast<int>(rng.uniform_int(config.min_side, max_side));
  }
  const int x0 = static_cast<int>(rng.uniform_int(0, w - side));
  const int y0 = static_cast<int>(rng.uniform_int(0, h - side));
  const Rect rect{x0, y0, side, side};

  LabeledPatch patch;
  patch.source_rect = rect;
  patch.image = resize_bilinear(crop(scene.image, rect), config.input_size, config.input_size);

  PointAnnotation cropped = crop_annotation(scene.annotation, rect);
  patch.true_count = cropped.count();
  // Rescale points into network-input coordinates and render at the output
  // resolution so the ground-truth count is exact under resizing.
  const double f = static_cast<double>(config.input_size) / side;
  PointAnnotation scaled;
  scaled.image_id = cropped.image_id;
  scaled.width = config.input_size;
  scaled.height = config.input_size;
  for (const auto& p : cropped.points) {
    scaled.points.push_back({std::min(p.x * f, config.input_size - 1e-9),
                             std::min(p.y * f, config.input_size - 1e-9)});
  }
  patch.gt = render_density(scaled, config.sigma_px, config.gt_cells(), config.gt_cells());
  return patch;
}

const Image& DirImageStore::get(const std::string& image_id) const {
  auto it = cache_.find(image_id);
  if (it != cache_.end()) return it->second;
  const auto path = dir_ / (image_id + ".pgm");
  auto [ins, inserted] = cache_.emplace(image_id, load_pgm(path));
  return ins->second;
}

void MemoryImageStore::put(std::string image_id, Image image) {
  images_[std::move(image_id)] = std::move(image);
}

const Image& MemoryImageStore::get(const std::string& image_id) const {
  auto it = images_.find(image_id);
  if (it == images_.end()) {
    throw std::runtime_error("image '" + image_id + "' not present in store");
  }
  return it->second;
}

const char* to_string(BatchKind kind) {
  switch (kind) {
    case BatchKind::counting: return "counting";
    case BatchKind::ranking: return "ranking";
    case BatchKind::mixed: return "mixed";
  }
  return "?";
}

namespace {

void fill_counting_rows(Minibatch& batch, const DataSources& sources,
                        const BatchConfig& config, Rng& rng) {
  const auto& scenes = *sources.labeled;
  const std::size_t plane =
      static_cast<std::size_t>(config.patch.input_size) * config.patch.input_size;
  for (int i = 0; i < config.counting_batch; ++i) {
    const auto idx = rng.uniform_int(0, static_cast<std::int64_t>(scenes.size()) - 1);
    LabeledPatch patch =
        sample_labeled_patch(scenes[static_cast<std::size_t>(idx)], config.patch, rng);
    std::copy(patch.image.pixels.begin(), patch.image.pixels.end(),
              batch.images.values().begin() + static_cast<std::ptrdiff_t>(i * plane));
    batch.gt.push_back(std::move(patch.gt));
    batch.true_counts.push_back(patch.true_count);
  }
}

void fill_ranking_rows(Minibatch& batch, const DataSources& sources,
                       const BatchConfig& config, int row_base, Rng& rng) {
  const auto& chains = *sources.chains;
  // Distinct chains per batch via a partial Fisher-Yates pass.
  std::vector<std::size_t> order(chains.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::vector<const RankedChain*> picked;
  for (int i = 0; i < config.ranking_sets; ++i) {
    const auto j = static_cast<std::size_t>(
        rng.uniform_int(i, static_cast<std::int64_t>(order.size()) - 1));
    std::swap(order[static_cast<std::size_t>(i)], order[j]);
    picked.push_back(&chains[order[static_cast<std::size_t>(i)]]);
  }

  const std::size_t plane =
      static_cast<std::size_t>(config.patch.input_size) * config.patch.input_size;
  int row = row_base;
  std::vector<int> lengths;
  for (const RankedChain* chain : picked) {
    const Image& image = sources.chain_images->get(chain->image_id);
    ag::Tensor rows = materialize(*chain, image, config.patch.input_size);
    std::copy(rows.values().begin(), rows.values().end(),
              batch.images.values().begin() + static_cast<std::ptrdiff_t>(row * plane));
    row += chain->k();
    lengths.push_back(chain->k());
  }
  PairSet pairs = enumerate_pairs(std::span<const int>(lengths));
  for (auto& pr : pairs.pairs) {
    pr.super += row_base;
    pr.sub += row_base;
  }
  batch.pairs = std::move(pairs);
}

}  // namespace

Minibatch assemble_batch(BatchKind kind, const DataSources& sources,
                         const BatchConfig& config, Rng& rng) {
  const bool needs_counting = kind != BatchKind::ranking;
  const bool needs_ranking = kind != BatchKind::counting;

  if (needs_counting) {
    if (!sources.labeled || sources.labeled->empty()) {
      throw std::runtime_error("assemble_batch: counting rows need at least 1 labeled scene, "
                               "0 available");
    }
  }
  int ranking_rows = 0;
  if (needs_ranking) {
    if (!sources.chains || !sources.chain_images) {
      throw std::runtime_error("assemble_batch: ranking rows need chains and images");
    }
    if (static_cast<int>(sources.chains->size()) < config.ranking_sets) {
      throw std::runtime_error("assemble_batch: ranking batch needs " +
                               std::to_string(config.ranking_sets) + " chains, " +
                               std::to_string(sources.chains->size()) + " available");
    }
    // Row arithmetic requires a uniform k across the pool (one manifest, one k).
    const int k = (*sources.chains)[0].k();
    for (const auto& chain : *sources.chains) {
      if (chain.k() != k) {
        throw std::runtime_error("assemble_batch: chain pool mixes k=" + std::to_string(k) +
                                 " and k=" + std::to_string(chain.k()));
      }
    }
    ranking_rows = config.ranking_sets * k;
  }

  Minibatch batch;
  batch.kind = kind;
  batch.counting_rows = needs_counting ? config.counting_batch : 0;
  const int total_rows = batch.counting_rows + ranking_rows;
  batch.images = ag::Tensor::zeros(
      {total_rows, 1, config.patch.input_size, config.patch.input_size});

  if (needs_counting) fill_counting_rows(batch, sources, config, rng);
  if (needs_ranking) fill_ranking_rows(batch, sources, config, batch.counting_rows, rng);
  return batch;
}

void save_corpus(const std::filesystem::path& dir, std::span<const SyntheticScene> scenes) {
  std::filesystem::create_directories(dir);
  std::vector<PointAnnotation> annotations;
  annotations.reserve(scenes.size());
  for (const auto& scene : scenes) {
    save_pgm(dir / (scene.annotation.image_id + ".pgm"), scene.image);
    annotations.push_back(scene.annotation);
  }
  save_annotations(dir / kAnnotationsFile, annotations);
}

std::vector<SyntheticScene> load_corpus(const std::filesystem::path& dir) {
  std::vector<PointAnnotation> annotations = load_annotations(dir / kAnnotationsFile);
  std::vector<SyntheticScene> scenes;
  scenes.reserve(annotations.size());
  for (auto& ann : annotations) {
    SyntheticScene scene;
    scene.image = load_pgm(dir / (ann.image_id + ".pgm"));
    if (scene.image.width != ann.width || scene.image.height != ann.height) {
      throw std::runtime_error("corpus image '" + ann.image_id +
                               "' size does not match its annotation");
    }
    scene.annotation = std::move(ann);
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

std::vector<CorpusEntry> scan_corpus(const std::filesystem::path& dir) {
  std::vector<CorpusEntry> entries;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".pgm") continue;
    CorpusEntry e;
    e.image_id = entry.path().stem().string();
    read_pgm_size(entry.path(), e.width, e.height);
    entries.push_back(std::move(e));
  }
  std::sort(entries.begin(), entries.end(),
            [](const CorpusEntry& a, const CorpusEntry& b) { return a.image_id < b.image_id; });
  if (entries.empty()) {
    throw std::runtime_error("no .pgm images found in corpus dir: " + dir.string());
  }
  return entries;
}

}  // namespace rankcount
