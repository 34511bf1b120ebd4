#include <doctest.h>

#include <algorithm>

#include "oracles.hpp"
#include "rankcount/losses.hpp"

using namespace rankcount;

namespace {

DensityMap map_from(std::vector<double> cells, int rows, int cols) {
  DensityMap m;
  m.rows = rows;
  m.cols = cols;
  m.cells = std::move(cells);
  return m;
}

PairSet pairs_of(std::initializer_list<std::pair<int, int>> list) {
  PairSet set;
  for (auto [super, sub] : list) set.pairs.push_back({super, sub});
  return set;
}

}  // namespace

TEST_CASE("counting_loss: zero at equality, a hand value, and the double-loop oracle") {
  SUBCASE("pred == gt gives zero") {
    auto pred = ag::Tensor::from_values({2, 1, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}, true);
    std::vector<DensityMap> gt{map_from({1, 2, 3, 4}, 2, 2), map_from({5, 6, 7, 8}, 2, 2)};
    auto loss = counting_loss(pred, gt);
    CHECK(loss.item() == 0.0);
    ag::backward(loss);
    for (double g : pred.grad()) CHECK(g == 0.0);
  }
  SUBCASE("single 1x1 map, pred 2, gt 0 -> 4") {
    auto pred = ag::Tensor::from_values({1, 1, 1, 1}, {2.0});
    CHECK(counting_loss(pred, {map_from({0.0}, 1, 1)}).item() == doctest::Approx(4.0));
  }
  SUBCASE("random batches match the oracle to 1e-5") {
    Rng rng(8);
    const int batch = 4, cells = 9;
    std::vector<std::vector<double>> pred_rows, gt_rows;
    std::vector<DensityMap> gt;
    std::vector<double> flat;
    for (int i = 0; i < batch; ++i) {
      pred_rows.push_back(oracles::random_values(cells, rng, 0.0, 3.0));
      gt_rows.push_back(oracles::random_values(cells, rng, 0.0, 3.0));
      flat.insert(flat.end(), pred_rows.back().begin(), pred_rows.back().end());
      gt.push_back(map_from(gt_rows.back(), 3, 3));
    }
    auto pred = ag::Tensor::from_values({batch, 1, 3, 3}, flat);
    CHECK(counting_loss(pred, gt).item() ==
          doctest::Approx(oracles::counting_loss_oracle(pred_rows, gt_rows)).epsilon(1e-5));
  }
  SUBCASE("shape mismatch names the offending sample") {
    auto pred = ag::Tensor::from_values({2, 1, 2, 2}, std::vector<double>(8, 0.0));
    std::vector<DensityMap> gt{map_from(std::vector<double>(4, 0.0), 2, 2),
                               map_from(std::vector<double>(6, 0.0), 2, 3)};
    CHECK_THROWS_WITH_AS(counting_loss(pred, gt), doctest::Contains("sample 1"),
                         std::runtime_error);
  }
  SUBCASE("finite-difference gradient") {
    Rng rng(9);
    std::vector<DensityMap> gt{map_from(oracles::random_values(4, rng, 0.0, 2.0), 2, 2)};
    std::vector<ag::Tensor> leaves{
        ag::Tensor::from_values({1, 1, 2, 2}, oracles::random_values(4, rng, 0.0, 2.0), true)};
    oracles::check_gradients(
        leaves, [&](const std::vector<ag::Tensor>& in) { return counting_loss(in[0], gt); });
  }
}

TEST_CASE("ranking_loss: Eq. 3/4 behaviour pair by pair") {
  SUBCASE("satisfied pair: zero loss, zero gradients") {
    auto counts = ag::Tensor::from_values({2}, {5.0, 3.0}, true);
    auto result = ranking_loss(counts, pairs_of({{0, 1}}), 0.0);
    CHECK(result.loss.item() == 0.0);
    CHECK(result.active_pairs == 0);
    ag::backward(result.loss);
    CHECK(counts.grad()[0] == 0.0);
    CHECK(counts.grad()[1] == 0.0);
  }
  SUBCASE("violated pair: loss 2, +1 on the contained count, -1 on the container") {
    auto counts = ag::Tensor::from_values({2}, {3.0, 5.0}, true);
    auto result = ranking_loss(counts, pairs_of({{0, 1}}), 0.0);
    CHECK(result.loss.item() == doctest::Approx(2.0));
    CHECK(result.active_pairs == 1);
    ag::backward(result.loss);
    CHECK(counts.grad()[0] == doctest::Approx(-1.0));
    CHECK(counts.grad()[1] == doctest::Approx(+1.0));
  }
  SUBCASE("exactly-zero hinge argument is the satisfied branch") {
    auto counts = ag::Tensor::from_values({2}, {4.0, 4.0}, true);
    auto result = ranking_loss(counts, pairs_of({{0, 1}}), 0.0);
    CHECK(result.loss.item() == 0.0);
    ag::backward(result.loss);
    CHECK(counts.grad()[0] == 0.0);
    CHECK(counts.grad()[1] == 0.0);
  }
  SUBCASE("random count vectors against the per-pair oracle") {
    Rng rng(10);
    for (int trial = 0; trial < 200; ++trial) {
      const int b = 25;
      auto values = oracles::random_values(b, rng, 0.0, 4.0);
      PairSet pairs;
      for (int i = 0; i < 50; ++i) {
        const int x = static_cast<int>(rng.uniform_int(0, b - 1));
        int y = static_cast<int>(rng.uniform_int(0, b - 1));
        if (y == x) y = (y + 1) % b;
        pairs.pairs.push_back({x, y});
      }
      auto counts = ag::Tensor::from_values({b}, values, true);
      auto result = ranking_loss(counts, pairs, 0.0);
      std::vector<double> oracle_grad;
      const double oracle_loss = oracles::hinge_oracle(values, pairs, 0.0, oracle_grad);
      CHECK(std::abs(result.loss.item() - oracle_loss) < 1e-6);
      ag::backward(result.loss);
      for (int i = 0; i < b; ++i) {
        REQUIRE(counts.grad()[static_cast<std::size_t>(i)] ==
                oracle_grad[static_cast<std::size_t>(i)]);
      }
    }
  }
  SUBCASE("pair order does not change the loss") {
    Rng rng(11);
    auto values = oracles::random_values(10, rng, 0.0, 2.0);
    PairSet fw;
    for (int i = 0; i < 9; ++i) fw.pairs.push_back({i, i + 1});
    PairSet bw{fw};
    std::reverse(bw.pairs.begin(), bw.pairs.end());
    auto counts = ag::Tensor::from_values({10}, values);
    CHECK(ranking_loss(counts, fw, 0.0).loss.item() ==
          doctest::Approx(ranking_loss(counts, bw, 0.0).loss.item()).epsilon(1e-12));
  }
  SUBCASE("out-of-batch pair index is rejected") {
    auto counts = ag::Tensor::from_values({2}, {1.0, 2.0});
    CHECK_THROWS_AS(ranking_loss(counts, pairs_of({{0, 2}}), 0.0), std::runtime_error);
  }
  SUBCASE("zero loss iff every pair is satisfied") {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
      auto values = oracles::random_values(6, rng, 0.0, 1.0);
      PairSet pairs;
      for (int i = 0; i < 5; ++i) pairs.pairs.push_back({i, i + 1});
      auto counts = ag::Tensor::from_values({6}, values);
      const double loss = ranking_loss(counts, pairs, 0.0).loss.item();
      bool all_satisfied = true;
      for (const auto& pr : pairs.pairs) {
        if (values[static_cast<std::size_t>(pr.sub)] >
            values[static_cast<std::size_t>(pr.super)]) {
          all_satisfied = false;
        }
      }
      CHECK((loss == 0.0) == all_satisfied);
    }
  }
}

TEST_CASE("multitask_loss: lambda weighting and gradient flow") {
  SUBCASE("lambda 0 degenerates to the counting term") {
    auto lc = ag::Tensor::scalar(1.25);
    auto lr = ag::Tensor::scalar(7.0);
    CHECK(multitask_loss(lc, lr, 0.0).item() == doctest::Approx(1.25));
  }
  SUBCASE("Lc=1, Lr=0.5, lambda=100 -> 51") {
    auto lc = ag::Tensor::scalar(1.0);
    auto lr = ag::Tensor::scalar(0.5);
    CHECK(multitask_loss(lc, lr, 100.0).item() == doctest::Approx(51.0));
  }
  SUBCASE("linearity against scalar arithmetic") {
    Rng rng(13);
    for (int trial = 0; trial < 50; ++trial) {
      const double a = rng.uniform(0.0, 10.0);
      const double b = rng.uniform(0.0, 10.0);
      const double lam = rng.uniform(0.0, 200.0);
      CHECK(multitask_loss(ag::Tensor::scalar(a), ag::Tensor::scalar(b), lam).item() ==
            doctest::Approx(a + lam * b).epsilon(1e-12));
    }
  }
  SUBCASE("gradients flow into both branches") {
    auto lc = ag::Tensor::scalar(1.0, true);
    auto lr = ag::Tensor::scalar(0.5, true);
    ag::backward(multitask_loss(lc, lr, 100.0));
    CHECK(lc.grad()[0] == doctest::Approx(1.0));
    CHECK(lr.grad()[0] == doctest::Approx(100.0));
  }
}
