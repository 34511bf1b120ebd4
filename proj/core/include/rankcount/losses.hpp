#pragma once

#include <vector>

#include "rankcount/density.hpp"
#include "rankcount/rankgen.hpp"
#include "rankcount/tensor.hpp"

namespace rankcount {

/// Mean (over the batch) of the summed squared differences between predicted
/// and ground-truth density maps: (1/M) * sum_i sum_cells (y_i - yhat_i)^2.
/// pred is [M,1,h,w]; gt must hold M maps of matching h x w.
ag::Tensor counting_loss(const ag::Tensor& pred, const std::vector<DensityMap>& gt);

struct RankingLossResult {
  ag::Tensor loss;       // rank-0 scalar
  int active_pairs = 0;  // pairs with a positive hinge argument
};

/// Batched pairwise hinge over per-unit count estimates:
/// sum_(super,sub) max(0, c[sub] - c[super] + epsilon). The gradient routes
/// +1 to the contained patch's count and -1 to the containing patch's count
/// for every violated pair and is exactly zero for satisfied pairs (including
/// a hinge argument of exactly zero).
RankingLossResult ranking_loss(const ag::Tensor& counts, const PairSet& pairs,
                               double epsilon);

/// L = L_c + lambda * L_r, with gradients flowing into both terms.
ag::Tensor multitask_loss(const ag::Tensor& counting, const ag::Tensor& ranking,
                          double lambda);

/// Scalar summary of one iteration's loss for logging.
struct LossValue {
  double total = 0.0;
  double counting_term = 0.0;
  double ranking_term = 0.0;
  int active_pairs = 0;
};

}  // namespace rankcount
