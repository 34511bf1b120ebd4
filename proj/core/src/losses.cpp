#include "rankcount/losses.hpp"

#include <stdexcept>
#include <string>

#include "ag_internal.hpp"

namespace rankcount {

using ag::detail::Node;

ag::Tensor counting_loss(const ag::Tensor& pred, const std::vector<DensityMap>& gt) {
  if (!pred.defined() || pred.shape().size() != 4 || pred.dim(1) != 1) {
    throw std::runtime_error("counting_loss expects predictions of shape [M,1,h,w]");
  }
  const int batch = pred.dim(0);
  const int rows = pred.dim(2);
  const int cols = pred.dim(3);
  if (static_cast<int>(gt.size()) != batch) {
    throw std::runtime_error("counting_loss: " + std::to_string(batch) + " predictions but " +
                             std::to_string(gt.size()) + " ground-truth maps");
  }
  const std::size_t plane = static_cast<std::size_t>(rows) * cols;
  for (int i = 0; i < batch; ++i) {
    if (gt[static_cast<std::size_t>(i)].rows != rows ||
        gt[static_cast<std::size_t>(i)].cols != cols) {
      throw std::runtime_error(
          "counting_loss: sample " + std::to_string(i) + " ground truth is " +
          std::to_string(gt[static_cast<std::size_t>(i)].rows) + "x" +
          std::to_string(gt[static_cast<std::size_t>(i)].cols) + ", prediction is " +
          std::to_string(rows) + "x" + std::to_string(cols));
    }
  }

  double acc = 0.0;
  for (int i = 0; i < batch; ++i) {
    const double* p = pred.values().data() + static_cast<std::size_t>(i) * plane;
    const double* y = gt[static_cast<std::size_t>(i)].cells.data();
    for (std::size_t j = 0; j < plane; ++j) {
      const double d = y[j] - p[j];
      acc += d * d;
    }
  }
  const double inv_batch = 1.0 / batch;

  // Ground-truth cell values are captured by value; only the prediction is a
  // graph input.
  std::vector<std::vector<double>> gt_cells;
  gt_cells.reserve(gt.size());
  for (const auto& m : gt) gt_cells.push_back(m.cells);

  auto bw = [gt_cells = std::move(gt_cells), batch, plane, inv_batch](Node& self) {
    auto& pin = *self.inputs[0];
    if (!pin.requires_grad) return;
    const double g = self.grad[0];
    std::vector<double> dp(pin.values.size());
    for (int i = 0; i < batch; ++i) {
      const double* p = pin.values.data() + static_cast<std::size_t>(i) * plane;
      const double* y = gt_cells[static_cast<std::size_t>(i)].data();
      double* out = dp.data() + static_cast<std::size_t>(i) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        out[j] = g * inv_batch * 2.0 * (p[j] - y[j]);
      }
    }
    ag::detail::accumulate_grad(pin, dp);
  };
  return ag::detail::make_op(ag::Shape{}, {acc * inv_batch}, {pred.node()}, std::move(bw),
                             "counting_loss");
}

RankingLossResult ranking_loss(const ag::Tensor& counts, const PairSet& pairs,
                               double epsilon) {
  if (!counts.defined() ||
      (counts.shape().size() != 1 &&
       !(counts.shape().size() == 2 && counts.dim(1) == 1))) {
    throw std::runtime_error("ranking_loss expects counts of shape [B] or [B,1]");
  }
  const int batch = counts.dim(0);
  for (const auto& pr : pairs.pairs) {
    if (pr.super < 0 || pr.super >= batch || pr.sub < 0 || pr.sub >= batch) {
      throw std::runtime_error("ranking_loss: pair (" + std::to_string(pr.super) + ", " +
                               std::to_string(pr.sub) + ") references outside batch of " +
                               std::to_string(batch));
    }
  }

  const auto& c = counts.values();
  double acc = 0.0;
  int active = 0;
  for (const auto& pr : pairs.pairs) {
    const double arg = c[static_cast<std::size_t>(pr.sub)] -
                       c[static_cast<std::size_t>(pr.super)] + epsilon;
    if (arg > 0.0) {
      acc += arg;
      ++active;
    }
  }

  auto pair_list = pairs.pairs;
  auto bw = [pair_list = std::move(pair_list), epsilon](Node& self) {
    auto& cin = *self.inputs[0];
    if (!cin.requires_grad) return;
    const double g = self.grad[0];
    std::vector<double> dc(cin.values.size(), 0.0);
    for (const auto& pr : pair_list) {
      const double arg = cin.values[static_cast<std::size_t>(pr.sub)] -
                         cin.values[static_cast<std::size_t>(pr.super)] + epsilon;
      // Satisfied pairs (arg <= 0) backpropagate nothing.
      if (arg > 0.0) {
        dc[static_cast<std::size_t>(pr.sub)] += g;
        dc[static_cast<std::size_t>(pr.super)] -= g;
      }
    }
    ag::detail::accumulate_grad(cin, dc);
  };
  RankingLossResult result;
  result.loss = ag::detail::make_op(ag::Shape{}, {acc}, {counts.node()}, std::move(bw),
                                    "ranking_loss");
  result.active_pairs = active;
  return result;
}

ag::Tensor multitask_loss(const ag::Tensor& counting, const ag::Tensor& ranking,
                          double lambda) {
  if (lambda < 0.0) throw std::runtime_error("multitask_loss: lambda must be >= 0");
  return ag::add(counting, ag::scale(ranking, lambda));
}

}  // namespace rankcount
