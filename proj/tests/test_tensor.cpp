#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "rankcount/checkpoint.hpp"
#include "rankcount/rng.hpp"
#include "rankcount/tensor.hpp"

using namespace rankcount;
namespace fs = std::filesystem;

TEST_CASE("conv2d: all-ones 3x3 against 3x3 kernel collapses to 9") {
  auto x = ag::Tensor::full({1, 1, 3, 3}, 1.0);
  auto k = ag::Tensor::full({1, 1, 3, 3}, 1.0);
  auto y = ag::conv2d(x, k, 1, 0);
  CHECK(y.shape() == ag::Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(9.0));
}

TEST_CASE("conv2d: identity 1x1 kernel reproduces the input") {
  Rng rng(7);
  auto x = ag::Tensor::from_values({1, 1, 4, 5}, oracles::random_values(20, rng));
  auto k = ag::Tensor::full({1, 1, 1, 1}, 1.0);
  auto y = ag::conv2d(x, k, 1, 0);
  REQUIRE(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.values().size(); ++i) {
    CHECK(y.values()[i] == doctest::Approx(x.values()[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d forward matches the naive six-loop oracle") {
  Rng rng(11);
  auto x = ag::Tensor::from_values({1, 2, 5, 5}, oracles::random_values(50, rng));
  auto k = ag::Tensor::from_values({3, 2, 3, 3}, oracles::random_values(54, rng));
  auto y = ag::conv2d(x, k, 1, 0);
  int ho, wo;
  auto ref = oracles::naive_conv2d(x.values(), 1, 2, 5, 5, k.values(), 3, 3, 3, 1, 0, ho, wo);
  REQUIRE(y.shape() == ag::Shape{1, 3, ho, wo});
  for (std::size_t i = 0; i < ref.size(); ++i) {
    CHECK(std::abs(y.values()[i] - ref[i]) < 1e-6);
  }
}

TEST_CASE("conv2d forward matches the oracle across a shape grid") {
  Rng rng(13);
  for (int n : {1, 2})
    for (int c : {1, 3})
      for (int f : {1, 4})
        for (int hw : {5, 8})
          for (int kk : {1, 3})
            for (int stride : {1, 2})
              for (int pad : {0, 1}) {
                if (kk > hw + 2 * pad) continue;
                if ((hw + 2 * pad - kk) % stride != 0) continue;
                auto x = ag::Tensor::from_values(
                    {n, c, hw, hw},
                    oracles::random_values(static_cast<std::size_t>(n) * c * hw * hw, rng));
                auto k = ag::Tensor::from_values(
                    {f, c, kk, kk},
                    oracles::random_values(static_cast<std::size_t>(f) * c * kk * kk, rng));
                auto y = ag::conv2d(x, k, stride, pad);
                int ho, wo;
                auto ref = oracles::naive_conv2d(x.values(), n, c, hw, hw, k.values(), f, kk,
                                                 kk, stride, pad, ho, wo);
                REQUIRE(y.shape() == ag::Shape{n, f, ho, wo});
                for (std::size_t i = 0; i < ref.size(); ++i) {
                  REQUIRE(std::abs(y.values()[i] - ref[i]) < 1e-6);
                }
              }
}

TEST_CASE("conv2d rejects bad geometry with descriptive errors") {
  auto x = ag::Tensor::full({1, 2, 4, 4}, 1.0);
  auto k_wrong_c = ag::Tensor::full({1, 3, 3, 3}, 1.0);
  CHECK_THROWS_WITH_AS(ag::conv2d(x, k_wrong_c, 1, 0),
                       doctest::Contains("channel mismatch"), std::runtime_error);
  auto k = ag::Tensor::full({1, 2, 3, 3}, 1.0);
  CHECK_THROWS_WITH_AS(ag::conv2d(x, k, 2, 0), doctest::Contains("inexact"),
                       std::runtime_error);
  auto k_big = ag::Tensor::full({1, 2, 7, 7}, 1.0);
  CHECK_THROWS_AS(ag::conv2d(x, k_big, 1, 0), std::runtime_error);
}

TEST_CASE("avg_pool_global: means, constants, and the sum/196 identity") {
  auto x = ag::Tensor::from_values({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(ag::avg_pool_global(x).item() == doctest::Approx(2.5));

  auto c = ag::Tensor::full({2, 3, 4, 4}, 0.73);
  auto pooled = ag::avg_pool_global(c);
  for (double v : pooled.values()) CHECK(v == doctest::Approx(0.73));

  Rng rng(5);
  auto m = ag::Tensor::from_values({1, 1, 14, 14}, oracles::random_values(196, rng, 0.0, 1.0));
  double total = 0.0;
  for (double v : m.values()) total += v;
  CHECK(ag::avg_pool_global(m).item() == doctest::Approx(total / 196.0).epsilon(1e-5));
}

TEST_CASE("sgd_step: fixed point, weight decay, and one quadratic step") {
  SUBCASE("zero gradient leaves the parameter alone") {
    auto p = ag::Tensor::from_values({1}, {1.0}, true).set_name("p");
    auto loss = ag::scale(ag::sum_all(p), 0.0);
    ag::backward(loss);
    std::vector<ag::Tensor> params{p};
    ag::sgd_step(params, 0.1, 0.0);
    CHECK(p.values()[0] == doctest::Approx(1.0));
  }
  SUBCASE("weight decay alone shrinks p by lr*wd*p") {
    auto p = ag::Tensor::from_values({1}, {1.0}, true).set_name("p");
    auto loss = ag::scale(ag::sum_all(p), 0.0);
    ag::backward(loss);
    std::vector<ag::Tensor> params{p};
    ag::sgd_step(params, 0.1, 0.5);
    CHECK(p.values()[0] == doctest::Approx(0.95));
  }
  SUBCASE("one step on f(p)=p^2 from p=3 gives 2.4") {
    auto p = ag::Tensor::from_values({1}, {3.0}, true).set_name("p");
    auto loss = ag::sum_all(ag::square(p));
    ag::backward(loss);
    std::vector<ag::Tensor> params{p};
    ag::sgd_step(params, 0.1, 0.0);
    CHECK(p.values()[0] == doctest::Approx(2.4));
  }
  SUBCASE("missing gradient names the parameter") {
    auto p = ag::Tensor::from_values({1}, {3.0}, true).set_name("head.weight");
    std::vector<ag::Tensor> params{p};
    CHECK_THROWS_WITH_AS(ag::sgd_step(params, 0.1, 0.0), doctest::Contains("head.weight"),
                         std::runtime_error);
  }
}

TEST_CASE("backward: sum gives all-ones and hinge composition routes Eq.-4 style") {
  SUBCASE("loss = sum(p) -> grad of ones") {
    auto p = ag::Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    ag::backward(ag::sum_all(p));
    for (double g : p.grad()) CHECK(g == doctest::Approx(1.0));
  }
  SUBCASE("inactive hinge max(0, c2-c1) has zero gradients on both sides") {
    auto c1 = ag::Tensor::from_values({1}, {5.0}, true);
    auto c2 = ag::Tensor::from_values({1}, {3.0}, true);
    auto loss = ag::sum_all(ag::relu(ag::sub(c2, c1)));
    CHECK(loss.item() == doctest::Approx(0.0));
    ag::backward(loss);
    CHECK(c1.grad()[0] == 0.0);
    CHECK(c2.grad()[0] == 0.0);
  }
  SUBCASE("repeated backward accumulates") {
    auto p = ag::Tensor::from_values({2}, {1.0, 2.0}, true);
    auto loss = ag::sum_all(p);
    ag::backward(loss);
    ag::backward(loss);
    CHECK(p.grad()[0] == doctest::Approx(2.0));
  }
  SUBCASE("non-scalar loss is rejected") {
    auto p = ag::Tensor::from_values({2}, {1.0, 2.0}, true);
    CHECK_THROWS_AS(ag::backward(ag::square(p)), std::runtime_error);
  }
}

TEST_CASE("finite-difference checks for every op") {
  const double tol = 1e-4;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    Rng rng(seed);

    {  // conv2d w.r.t. input and kernel, stride 2 + pad 1
      std::vector<ag::Tensor> leaves{
          ag::Tensor::from_values({1, 2, 5, 5}, oracles::random_values(50, rng), true),
          ag::Tensor::from_values({2, 2, 3, 3}, oracles::random_values(36, rng), true),
          ag::Tensor::from_values({2, 2, 3, 3}, oracles::random_values(36, rng), false)};
      oracles::check_gradients(leaves, [](const std::vector<ag::Tensor>& in) {
        auto y = ag::conv2d(in[0], in[1], 2, 1);
        return ag::sum_all(ag::mul(y, ag::conv2d(in[0], in[2], 2, 1)));
      }, 1e-3, tol);
    }
    {  // avg_pool_global + add_channel_bias
      std::vector<ag::Tensor> leaves{
          ag::Tensor::from_values({2, 3, 4, 4}, oracles::random_values(96, rng), true),
          ag::Tensor::from_values({3}, oracles::random_values(3, rng), true)};
      oracles::check_gradients(leaves, [](const std::vector<ag::Tensor>& in) {
        return ag::sum_all(ag::square(ag::avg_pool_global(ag::add_channel_bias(in[0], in[1]))));
      }, 1e-3, tol);
    }
    {  // relu away from the kink
      auto vals = oracles::random_values(40, rng);
      for (auto& v : vals) v += v >= 0.0 ? 0.05 : -0.05;
      std::vector<ag::Tensor> leaves{ag::Tensor::from_values({40}, vals, true)};
      oracles::check_gradients(leaves, [](const std::vector<ag::Tensor>& in) {
        return ag::sum_all(ag::square(ag::relu(in[0])));
      }, 1e-3, tol);
    }
    {  // softplus, scale, add_scalar, add, sub, mul, slice_rows
      std::vector<ag::Tensor> leaves{
          ag::Tensor::from_values({6, 2}, oracles::random_values(12, rng), true),
          ag::Tensor::from_values({3, 2}, oracles::random_values(6, rng), true)};
      oracles::check_gradients(leaves, [](const std::vector<ag::Tensor>& in) {
        auto part = ag::slice_rows(in[0], 1, 4);
        auto mixed = ag::mul(ag::add(part, in[1]), ag::sub(part, in[1]));
        return ag::sum_all(ag::softplus(ag::add_scalar(ag::scale(mixed, 0.7), 0.3)));
      }, 1e-3, tol);
    }
  }
}

TEST_CASE("two identical seeded forward+backward runs are bitwise identical") {
  auto run = [] {
    Rng rng(99);
    auto x = ag::Tensor::from_values({2, 1, 6, 6}, oracles::random_values(72, rng));
    auto k = ag::Tensor::from_values({2, 1, 3, 3}, oracles::random_values(18, rng), true)
                 .set_name("k");
    auto loss = ag::sum_all(ag::square(ag::relu(ag::conv2d(x, k, 1, 1))));
    ag::backward(loss);
    std::vector<ag::Tensor> params{k};
    ag::sgd_step(params, 0.05, 5e-4);
    return k.values();
  };
  const auto a = run();
  const auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("finite check rejects NaN-producing ops when enabled") {
  auto x = ag::Tensor::from_values({1}, {1e308});
  CHECK_THROWS_AS(ag::add(x, x), std::runtime_error);
  ag::set_finite_checks(false);
  CHECK_NOTHROW(ag::add(x, x));
  ag::set_finite_checks(true);
}

TEST_CASE("tensor file round-trips byte-identically after one load") {
  const fs::path dir = fs::temp_directory_path() / "rankcount_ckpt_test";
  fs::create_directories(dir);
  Rng rng(3);
  std::vector<TensorEntry> entries;
  entries.push_back({"a.weight", {2, 3}, oracles::random_values(6, rng)});
  entries.push_back({"b.bias", {4}, oracles::random_values(4, rng)});
  const fs::path first = dir / "first.ckpt";
  save_tensor_file(first, "in=1;widths=2", entries);

  TensorFile loaded = load_tensor_file(first);
  CHECK(loaded.meta == "in=1;widths=2");
  REQUIRE(loaded.entries.size() == 2);
  CHECK(loaded.entries[0].name == "a.weight");
  CHECK(loaded.entries[1].shape == ag::Shape{4});
  // Values already passed through float32 once, so a re-save is bit-identical.
  const fs::path second = dir / "second.ckpt";
  save_tensor_file(second, loaded.meta, loaded.entries);
  std::ifstream f1(first, std::ios::binary), f2(second, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(hash_file(first) == hash_file(second));
  fs::remove_all(dir);
}
