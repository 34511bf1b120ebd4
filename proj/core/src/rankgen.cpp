#include "rankcount/rankgen.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

namespace rankcount {

Rect RankedChain::rect(int index) const {
  const int side = sides.at(static_cast<std::size_t>(index));
  const int x0 = static_cast<int>(std::lround(anchor_x - side / 2.0));
  const int y0 = static_cast<int>(std::lround(anchor_y - side / 2.0));
  return Rect{x0, y0, side, side};
}

Rect anchor_region(int width, int height, double r, AnchorMode mode) {
  const double shrink = mode == AnchorMode::area ? std::sqrt(r) : r;
  const double rw = width / shrink;
  const double rh = height / shrink;
  const double x0 = (width - rw) / 2.0;
  const double y0 = (height - rh) / 2.0;
  // Held as a real-valued region by callers; the Rect here is only used for
  // reporting, so round conservatively inward.
  return Rect{static_cast<int>(std::ceil(x0)), static_cast<int>(std::ceil(y0)),
              static_cast<int>(std::floor(rw)), static_cast<int>(std::floor(rh))};
}

namespace {

/// Largest integer square side centered at (ax, ay) inside width x height.
int largest_centered_side(int width, int height, double ax, double ay) {
  const double half = std::min(std::min(ax, width - ax), std::min(ay, height - ay));
  return static_cast<int>(std::floor(2.0 * half));
}

std::vector<int> side_chain(int side0, int k, double s) {
  std::vector<int> sides;
  sides.reserve(static_cast<std::size_t>(k));
  int side = side0;
  for (int i = 0; i < k; ++i) {
    sides.push_back(side);
    side = static_cast<int>(std::floor(side * s));
  }
  return sides;
}

void validate_chain(const RankedChain& chain, int width, int height, int min_side) {
  const Rect image_rect{0, 0, width, height};
  for (int i = 0; i < chain.k(); ++i) {
    const Rect rect = chain.rect(i);
    if (!image_rect.contains(rect)) {
      throw std::runtime_error("chain rect " + std::to_string(i) + " escapes image bounds");
    }
    if (rect.w < min_side) {
      throw ChainInfeasible("chain patch " + std::to_string(i) + " side " +
                            std::to_string(rect.w) + " below minimum " +
                            std::to_string(min_side));
    }
    if (i > 0 && !chain.rect(i - 1).contains(rect)) {
      throw std::runtime_error("chain rect " + std::to_string(i) +
                               " not contained in its predecessor");
    }
  }
}

}  // namespace

RankedChain chain_from_anchor(int width, int height, double anchor_x, double anchor_y,
                              const ChainParams& params) {
  if (params.k < 2) throw std::runtime_error("chain needs k >= 2");
  if (!(params.s > 0.0 && params.s < 1.0)) throw std::runtime_error("chain needs 0 < s < 1");
  RankedChain chain;
  chain.anchor_x = anchor_x;
  chain.anchor_y = anchor_y;
  chain.sides = side_chain(largest_centered_side(width, height, anchor_x, anchor_y),
                           params.k, params.s);
  validate_chain(chain, width, height, params.min_side);
  return chain;
}

RankedChain generate_chain(int width, int height, const ChainParams& params, Rng& rng) {
  if (params.k < 2) throw std::runtime_error("chain needs k >= 2");
  if (!(params.s > 0.0 && params.s < 1.0)) throw std::runtime_error("chain needs 0 < s < 1");
  if (params.r < 1.0) throw std::runtime_error("chain needs r >= 1");

  const double shrink = params.anchor_mode == AnchorMode::area ? std::sqrt(params.r) : params.r;
  const double half_w = width / (2.0 * shrink);
  const double half_h = height / (2.0 * shrink);

  // Feasibility is decided from the worst-case anchor (region corner) before
  // consuming randomness, so the error does not depend on the draw.
  const double worst_ax = width / 2.0 - half_w;
  const double worst_ay = height / 2.0 - half_h;
  const int worst_side0 = largest_centered_side(width, height, worst_ax, worst_ay);
  const std::vector<int> worst = side_chain(worst_side0, params.k, params.s);
  if (worst.back() < params.min_side) {
    throw ChainInfeasible("image " + std::to_string(width) + "x" + std::to_string(height) +
                          " too small for k=" + std::to_string(params.k) +
                          " patches of at least " + std::to_string(params.min_side) +
                          " px (worst-case smallest side " + std::to_string(worst.back()) + ")");
  }

  const double ax = rng.uniform(width / 2.0 - half_w, width / 2.0 + half_w);
  const double ay = rng.uniform(height / 2.0 - half_h, height / 2.0 + half_h);
  RankedChain chain = chain_from_anchor(width, height, ax, ay, params);
  return chain;
}

PairSet enumerate_pairs(std::span<const int> chain_lengths) {
  PairSet set;
  int base = 0;
  for (const int k : chain_lengths) {
    for (int i = 0; i < k; ++i) {
      for (int j = i + 1; j < k; ++j) {
        set.pairs.push_back({base + i, base + j});
      }
    }
    base += k;
  }
  return set;
}

PairSet enumerate_pairs(std::span<const RankedChain> chains) {
  std::vector<int> lengths;
  lengths.reserve(chains.size());
  for (const auto& chain : chains) lengths.push_back(chain.k());
  return enumerate_pairs(std::span<const int>(lengths));
}

ag::Tensor materialize(const RankedChain& chain, const Image& image, int input_size) {
  const int k = chain.k();
  ag::Tensor out = ag::Tensor::zeros({k, 1, input_size, input_size});
  auto& values = out.values();
  const std::size_t plane = static_cast<std::size_t>(input_size) * input_size;
  for (int i = 0; i < k; ++i) {
    const Image patch = resize_bilinear(crop(image, chain.rect(i)), input_size, input_size);
    std::copy(patch.pixels.begin(), patch.pixels.end(),
              values.begin() + static_cast<std::ptrdiff_t>(i * plane));
  }
  return out;
}

void save_chains(const std::filesystem::path& path, std::span<const RankedChain> chains) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  for (const auto& chain : chains) {
    nlohmann::json j{{"image-id", chain.image_id},
                     {"anchor", {chain.anchor_x, chain.anchor_y}},
                     {"sides", chain.sides},
                     {"seed", chain.seed}};
    out << j.dump() << '\n';
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<RankedChain> load_chains(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open chain manifest: " + path.string());
  std::vector<RankedChain> chains;
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
                               ": bad chain record: " + e.what());
    }
    RankedChain chain;
    chain.image_id = j.at("image-id").get<std::string>();
    chain.anchor_x = j.at("anchor").at(0).get<double>();
    chain.anchor_y = j.at("anchor").at(1).get<double>();
    chain.sides = j.at("sides").get<std::vector<int>>();
    chain.seed = j.at("seed").get<std::uint64_t>();
    if (chain.sides.size() < 2) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": chain has fewer than 2 patches");
    }
    chains.push_back(std::move(chain));
  }
  return chains;
}

}  // namespace rankcount
