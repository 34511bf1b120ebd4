#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "rankcount/density.hpp"
#include "rankcount/tensor.hpp"

using namespace rankcount;
namespace fs = std::filesystem;

namespace {

PointAnnotation make_ann(int w, int h, std::vector<Point> pts) {
  PointAnnotation ann;
  ann.image_id = "t";
  ann.width = w;
  ann.height = h;
  ann.points = std::move(pts);
  return ann;
}

}  // namespace

TEST_CASE("render_density: empty annotation gives an all-zero map") {
  auto map = render_density(make_ann(128, 128, {}), 15.0, 128, 128);
  CHECK(count_from_density(map) == 0.0);
  for (double v : map.cells) CHECK(v == 0.0);
}

TEST_CASE("render_density: one interior point integrates to 1 within 0.1%") {
  // Oracle: continuous Gaussian mass inside the image via erf.
  const double sigma = 15.0;
  auto ann = make_ann(256, 256, {{128.0, 128.0}});
  SUBCASE("full resolution") {
    auto map = render_density(ann, sigma, 256, 256);
    const double expect = oracles::gaussian_mass_in_rect(128.0, 128.0, sigma, 256, 256);
    CHECK(expect == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(count_from_density(map) == doctest::Approx(1.0).epsilon(1e-3));
  }
  SUBCASE("stride-16 resolution") {
    auto map = render_density(ann, sigma, 16, 16);
    CHECK(map.cell_px == doctest::Approx(16.0));
    CHECK(count_from_density(map) == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("render_density: N interior points sum to N within 1%") {
  Rng rng(21);
  std::vector<Point> pts;
  for (int i = 0; i < 40; ++i) {
    pts.push_back({rng.uniform(64.0, 448.0), rng.uniform(64.0, 448.0)});
  }
  auto map = render_density(make_ann(512, 512, pts), 15.0, 32, 32);
  CHECK(count_from_density(map) == doctest::Approx(40.0).epsilon(0.01));
  for (double v : map.cells) CHECK(v >= 0.0);
}

TEST_CASE("count_from_density basics and the avg-pool identity") {
  DensityMap zero{4, 4, 1.0, std::vector<double>(16, 0.0)};
  CHECK(count_from_density(zero) == 0.0);

  DensityMap uniform{14, 14, 1.0, std::vector<double>(196, 1.0 / 196.0)};
  CHECK(count_from_density(uniform) == doctest::Approx(1.0));

  Rng rng(4);
  DensityMap random{14, 14, 1.0, oracles::random_values(196, rng, 0.0, 1.0)};
  auto t = ag::Tensor::from_values({1, 1, 14, 14}, random.cells);
  const double pooled = ag::avg_pool_global(t).item();
  CHECK(count_from_density(random) == doctest::Approx(pooled * 196.0).epsilon(1e-5));
}

TEST_CASE("crop_annotation: identity, emptiness, and the brute-force filter") {
  Rng rng(17);
  std::vector<Point> pts;
  for (int i = 0; i < 100; ++i) pts.push_back({rng.uniform(0.0, 200.0), rng.uniform(0.0, 100.0)});
  auto ann = make_ann(200, 100, pts);

  SUBCASE("whole-image rect keeps everything") {
    auto out = crop_annotation(ann, {0, 0, 200, 100});
    CHECK(out.count() == 100);
  }
  SUBCASE("point-free rect gives an empty annotation") {
    auto tiny = make_ann(200, 100, {{150.5, 50.5}});
    auto out = crop_annotation(tiny, {0, 0, 10, 10});
    CHECK(out.count() == 0);
  }
  SUBCASE("random rects match the brute-force point filter") {
    for (int trial = 0; trial < 50; ++trial) {
      const int w = static_cast<int>(rng.uniform_int(1, 200));
      const int h = static_cast<int>(rng.uniform_int(1, 100));
      const Rect rect{static_cast<int>(rng.uniform_int(0, 200 - w)),
                      static_cast<int>(rng.uniform_int(0, 100 - h)), w, h};
      auto out = crop_annotation(ann, rect);
      CHECK(out.count() == oracles::count_points_in_rect(pts, rect));
      for (const auto& p : out.points) {
        CHECK(p.x >= 0.0);
        CHECK(p.x < rect.w);
      }
    }
  }
  SUBCASE("degenerate rect is rejected") {
    CHECK_THROWS_AS(crop_annotation(ann, {10, 10, 0, 5}), std::runtime_error);
  }
  SUBCASE("escaping rect is rejected") {
    CHECK_THROWS_AS(crop_annotation(ann, {190, 90, 20, 20}), std::runtime_error);
  }
}

TEST_CASE("nested rects never gain points (containment monotonicity)") {
  Rng rng(31);
  std::vector<Point> pts;
  for (int i = 0; i < 200; ++i) pts.push_back({rng.uniform(0.0, 300.0), rng.uniform(0.0, 300.0)});
  auto ann = make_ann(300, 300, pts);
  for (int trial = 0; trial < 30; ++trial) {
    const int side_a = static_cast<int>(rng.uniform_int(50, 300));
    const Rect a{static_cast<int>(rng.uniform_int(0, 300 - side_a)),
                 static_cast<int>(rng.uniform_int(0, 300 - side_a)), side_a, side_a};
    const int side_b = static_cast<int>(rng.uniform_int(1, side_a));
    const Rect b{a.x + static_cast<int>(rng.uniform_int(0, side_a - side_b)),
                 a.y + static_cast<int>(rng.uniform_int(0, side_a - side_b)), side_b, side_b};
    REQUIRE(a.contains(b));
    CHECK(crop_annotation(ann, b).count() <= crop_annotation(ann, a).count());
  }
}

TEST_CASE("annotation JSONL round-trips and rejects out-of-bounds points") {
  const fs::path dir = fs::temp_directory_path() / "rankcount_density_test";
  fs::create_directories(dir);
  const fs::path file = dir / "annotations.jsonl";

  std::vector<PointAnnotation> anns;
  anns.push_back(make_ann(64, 48, {{1.5, 2.5}, {63.0, 47.0}}));
  anns[0].image_id = "img_a";
  save_annotations(file, anns);
  auto loaded = load_annotations(file);
  REQUIRE(loaded.size() == 1);
  CHECK(loaded[0].image_id == "img_a");
  CHECK(loaded[0].width == 64);
  REQUIRE(loaded[0].count() == 2);
  CHECK(loaded[0].points[1].x == doctest::Approx(63.0));

  std::ofstream bad(file, std::ios::trunc);
  bad << R"({"image-id":"x","width":10,"height":10,"points":[[10.0,5.0]]})" << "\n";
  bad.close();
  CHECK_THROWS_WITH_AS(load_annotations(file), doctest::Contains("outside image"),
                       std::runtime_error);
  fs::remove_all(dir);
}

TEST_CASE("density map exports: tensor container round-trip and PGM header") {
  const fs::path dir = fs::temp_directory_path() / "rankcount_density_export";
  fs::create_directories(dir);
  auto map = render_density(make_ann(64, 64, {{32.0, 32.0}}), 8.0, 64, 64);

  save_density_tensor(dir / "d.rct", map);
  auto back = load_density_tensor(dir / "d.rct");
  CHECK(back.rows == 64);
  CHECK(back.cell_px == doctest::Approx(1.0));
  CHECK(count_from_density(back) == doctest::Approx(count_from_density(map)).epsilon(1e-5));

  save_density_pgm(dir / "d.pgm", map);
  auto img = load_pgm(dir / "d.pgm");
  CHECK(img.width == 64);
  CHECK(img.height == 64);
  // Max-normalized: the brightest pixel is at the point.
  CHECK(img.at(32, 32) == doctest::Approx(1.0).epsilon(0.01));
  fs::remove_all(dir);
}
