#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rankcount/geometry.hpp"
#include "rankcount/image.hpp"
#include "rankcount/rng.hpp"
#include "rankcount/tensor.hpp"

namespace rankcount {

enum class AnchorMode {
  /// Anchor region has area (W*H)/r with the image's aspect ratio (each side
  /// scaled by 1/sqrt(r)).
  area,
  /// Each side of the anchor region is 1/r of the image side.
  side,
};

struct ChainParams {
  int k = 5;
  double s = 0.75;
  double r = 8.0;
  AnchorMode anchor_mode = AnchorMode::area;
  int min_side = 32;
};

/// Ordered list of k nested concentric square patches; rects[0] is the
/// largest. Side lengths are floored to integer pixels after each scale step.
struct RankedChain {
  std::string image_id;
  double anchor_x = 0.0;
  double anchor_y = 0.0;
  std::vector<int> sides;  // strictly decreasing
  std::uint64_t seed = 0;

  int k() const { return static_cast<int>(sides.size()); }
  /// Integer pixel rect of patch `index`, centered on the anchor.
  Rect rect(int index) const;
};

struct ChainInfeasible : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Index pairs (super, sub) where patch `sub` is contained in patch `super`
/// and therefore holds at most as many persons. Indices address rows of the
/// minibatch the pairs were enumerated for.
struct PairSet {
  struct Pair {
    int super = 0;
    int sub = 0;
  };
  std::vector<Pair> pairs;

  std::size_t size() const { return pairs.size(); }
};

/// Centered rectangle with area (or side) fraction 1/r of the image.
Rect anchor_region(int width, int height, double r, AnchorMode mode);

/// Deterministic chain construction from a fixed anchor (steps 2-3: largest
/// centered square, then k-1 reductions by factor s with flooring).
RankedChain chain_from_anchor(int width, int height, double anchor_x, double anchor_y,
                              const ChainParams& params);

/// Full generation: samples the anchor uniformly from the anchor region.
/// Throws ChainInfeasible if the worst-case anchor position would make the
/// k-th patch smaller than params.min_side.
RankedChain generate_chain(int width, int height, const ChainParams& params, Rng& rng);

/// All within-chain ordered pairs for the chains of one minibatch, in row
/// order (chain 0 occupies rows [0, k0), chain 1 rows [k0, k0+k1), ...).
/// Yields sum k_i*(k_i-1)/2 pairs; never pairs across chains.
PairSet enumerate_pairs(std::span<const RankedChain> chains);
PairSet enumerate_pairs(std::span<const int> chain_lengths);

/// Crops every patch and bilinearly resizes to input_size x input_size;
/// returns a [k, 1, input_size, input_size] tensor with values in [0, 1].
ag::Tensor materialize(const RankedChain& chain, const Image& image, int input_size);

// --- Chain manifest (JSON lines) ---------------------------------------------

void save_chains(const std::filesystem::path& path, std::span<const RankedChain> chains);
std::vector<RankedChain> load_chains(const std::filesystem::path& path);

}  // namespace rankcount
