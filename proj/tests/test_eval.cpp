#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "rankcount/checkpoint.hpp"
#include "rankcount/eval.hpp"

using namespace rankcount;
namespace fs = std::filesystem;

namespace {

EvalDataset tiny_dataset(int n, std::uint64_t seed, int size = 160, int min_count = 3,
                         int max_count = 30) {
  SceneParams p;
  p.width = p.height = size;
  p.min_count = min_count;
  p.max_count = max_count;
  return EvalDataset::from_scenes("synthetic", generate_corpus(p, n, seed));
}

CountingNet tiny_net(std::uint64_t seed) {
  ModelConfig config;
  config.widths = {4, 6};  // stride 4
  Rng rng(seed);
  return CountingNet::init(config, rng);
}

}  // namespace

TEST_CASE("predict_count: zero-weight head sums softplus(0) over all cells") {
  ModelConfig config;  // stride 16
  Rng rng(1);
  auto net = CountingNet::init(config, rng);
  for (auto& p : net.parameters()) {
    if (p.name() == "head.weight") std::fill(p.values().begin(), p.values().end(), 0.0);
  }
  Image img = Image::filled(224, 224, 0.3);
  const double c = std::log(2.0);
  CHECK(predict_count(net, img) == doctest::Approx(196.0 * c).epsilon(1e-9));
}

TEST_CASE("predict_count handles non-multiple sizes by reflect padding") {
  auto net = tiny_net(2);
  Image img = Image::filled(150, 131, 0.4);  // stride 4: pads to 152 x 132
  const double count = predict_count(net, img);
  CHECK(std::isfinite(count));
  CHECK(count > 0.0);
  // Too-small images are rejected.
  CHECK_THROWS_AS(predict_count(net, Image::filled(2, 2, 0.1)), std::runtime_error);
}

TEST_CASE("evaluate: hand values and the independent recomputation oracle") {
  SUBCASE("perfect predictions give zero MAE and MSE") {
    auto ds = tiny_dataset(6, 11);
    int i = 0;
    auto report = evaluate(
        [&](const Image&) { return static_cast<double>(ds.scenes[i++].annotation.count()); },
        ds);
    CHECK(report.mae == 0.0);
    CHECK(report.mse == 0.0);
  }
  SUBCASE("errors [+3, -4] over two images: MAE 3.5, MSE sqrt(12.5)") {
    auto ds = tiny_dataset(2, 12);
    int i = 0;
    auto report = evaluate(
        [&](const Image&) {
          const double truth = ds.scenes[i].annotation.count();
          return truth + (i++ == 0 ? 3.0 : -4.0);
        },
        ds);
    CHECK(report.mae == doctest::Approx(3.5));
    CHECK(report.mse == doctest::Approx(std::sqrt(12.5)));
  }
  SUBCASE("100 random items match the oracle to 1e-9, and MAE <= MSE") {
    Rng rng(13);
    for (int trial = 0; trial < 20; ++trial) {
      EvalReport report;
      std::vector<double> truths, preds;
      for (int i = 0; i < 100; ++i) {
        EvalItem item;
        item.image_id = "i" + std::to_string(i);
        item.true_count = rng.uniform(0.0, 500.0);
        item.predicted = rng.uniform(0.0, 500.0);
        truths.push_back(item.true_count);
        preds.push_back(item.predicted);
        report.items.push_back(std::move(item));
      }
      finalize_report(report);
      double mae, mse;
      oracles::metrics_oracle(truths, preds, mae, mse);
      REQUIRE(std::abs(report.mae - mae) < 1e-9);
      REQUIRE(std::abs(report.mse - mse) < 1e-9);
      REQUIRE(report.mae <= report.mse + 1e-12);
    }
  }
  SUBCASE("metrics are permutation-invariant and absolutely homogeneous") {
    Rng rng(14);
    EvalReport a;
    for (int i = 0; i < 50; ++i) {
      a.items.push_back({"i" + std::to_string(i), rng.uniform(0.0, 100.0),
                         rng.uniform(0.0, 100.0)});
    }
    EvalReport b = a;
    std::reverse(b.items.begin(), b.items.end());
    finalize_report(a);
    finalize_report(b);
    CHECK(a.mae == doctest::Approx(b.mae).epsilon(1e-12));
    CHECK(a.mse == doctest::Approx(b.mse).epsilon(1e-12));

    // Scaling every error by alpha scales MAE and MSE by |alpha|.
    const double alpha = -2.5;
    EvalReport scaled = a;
    for (auto& item : scaled.items) {
      item.predicted = item.true_count + alpha * (item.predicted - item.true_count);
    }
    finalize_report(scaled);
    CHECK(scaled.mae == doctest::Approx(std::abs(alpha) * a.mae).epsilon(1e-9));
    CHECK(scaled.mse == doctest::Approx(std::abs(alpha) * a.mse).epsilon(1e-9));
  }
}

TEST_CASE("rendered-ground-truth stub predicts counts up to the truncation bias") {
  // Interior-supported scenes: points at least 4 sigma away from every border.
  SceneParams p;
  p.width = p.height = 512;
  p.min_count = 0;
  p.max_count = 0;
  std::vector<SyntheticScene> scenes;
  Rng rng(15);
  for (int i = 0; i < 4; ++i) {
    auto scene = generate_scene(p, rng);
    scene.annotation.image_id = "interior_" + std::to_string(i);
    for (int j = 0; j < 25; ++j) {
      scene.annotation.points.push_back({rng.uniform(64.0, 448.0), rng.uniform(64.0, 448.0)});
    }
    scenes.push_back(std::move(scene));
  }
  auto ds = EvalDataset::from_scenes("interior", std::move(scenes));
  int i = 0;
  auto report = evaluate(
      [&](const Image&) {
        auto map = render_density(ds.scenes[static_cast<std::size_t>(i++)].annotation, 15.0,
                                  32, 32);
        return count_from_density(map);
      },
      ds);
  CHECK(report.mae == doctest::Approx(0.0).epsilon(0.01));
  CHECK(report.mae < 0.05);
}

TEST_CASE("tiled and whole-image inference agree within the documented 5%") {
  auto net = tiny_net(3);
  SceneParams p;
  p.width = p.height = 448;
  p.min_count = 40;
  p.max_count = 40;
  Rng rng(16);
  auto scene = generate_scene(p, rng);

  const double whole = predict_count(net, scene.image);
  double tiled = 0.0;
  for (int ty = 0; ty < 2; ++ty)
    for (int tx = 0; tx < 2; ++tx)
      tiled += predict_count(net, crop(scene.image, {tx * 224, ty * 224, 224, 224}));
  CHECK(std::abs(whole - tiled) / std::max(1.0, whole) < 0.05);
}

TEST_CASE("transfer_eval tags reports and equals evaluate on the same dataset") {
  auto net = tiny_net(4);
  auto source = tiny_dataset(5, 17);
  auto report = evaluate(net, source);
  auto transfer = transfer_eval(net, source);
  CHECK_FALSE(report.cross_dataset);
  CHECK(transfer.cross_dataset);
  CHECK(report.mae == doctest::Approx(transfer.mae).epsilon(1e-12));

  // Sparse -> dense domain shift still yields a finite report.
  auto dense = tiny_dataset(5, 18, 160, 80, 120);
  auto shifted = transfer_eval(net, dense);
  CHECK(std::isfinite(shifted.mae));
  CHECK(std::isfinite(shifted.mse));
}

TEST_CASE("evaluate is read-only with respect to the checkpoint") {
  const fs::path dir = fs::temp_directory_path() / "rankcount_eval_ro";
  fs::create_directories(dir);
  auto net = tiny_net(5);
  const fs::path ckpt = dir / "net.ckpt";
  net.save(ckpt);
  const auto before = hash_file(ckpt);

  auto loaded = CountingNet::load(ckpt);
  auto ds = tiny_dataset(3, 19);
  auto report = evaluate(loaded, ds);
  report.checkpoint_hash = before;
  CHECK(hash_file(ckpt) == before);
  fs::remove_all(dir);
}

TEST_CASE("report CSV round-trips items, metadata and footers") {
  const fs::path dir = fs::temp_directory_path() / "rankcount_eval_csv";
  fs::create_directories(dir);
  EvalReport report;
  report.dataset_id = "synthetic_b";
  report.label = "multitask";
  report.checkpoint_hash = 0xabcdef12u;
  report.cross_dataset = true;
  report.items = {{"img_0", 10.0, 12.5}, {"img_1", 20.0, 18.0}};
  finalize_report(report);

  const fs::path csv = dir / "report.csv";
  write_report_csv(csv, report);
  auto back = read_report_csv(csv);
  CHECK(back.dataset_id == "synthetic_b");
  CHECK(back.label == "multitask");
  CHECK(back.checkpoint_hash == 0xabcdef12u);
  CHECK(back.cross_dataset);
  REQUIRE(back.items.size() == 2);
  CHECK(back.items[0].predicted == doctest::Approx(12.5));
  CHECK(back.mae == doctest::Approx(report.mae).epsilon(1e-12));
  CHECK(back.mse == doctest::Approx(report.mse).epsilon(1e-12));
  fs::remove_all(dir);
}

TEST_CASE("fold_split partitions ids evenly and deterministically") {
  std::vector<std::string> ids;
  for (int i = 0; i < 50; ++i) ids.push_back("img_" + std::to_string(i));
  auto folds = fold_split(ids, 5, 7);
  REQUIRE(folds.size() == 5);
  std::vector<std::string> all;
  for (const auto& fold : folds) {
    CHECK(fold.size() == 10);
    all.insert(all.end(), fold.begin(), fold.end());
  }
  std::sort(all.begin(), all.end());
  std::vector<std::string> sorted_ids = ids;
  std::sort(sorted_ids.begin(), sorted_ids.end());
  CHECK(all == sorted_ids);

  auto again = fold_split(ids, 5, 7);
  CHECK(folds == again);
  auto different = fold_split(ids, 5, 8);
  CHECK(folds != different);
}
