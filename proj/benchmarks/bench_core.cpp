#include <benchmark/benchmark.h>

#include "rankcount/data.hpp"
#include "rankcount/density.hpp"
#include "rankcount/losses.hpp"
#include "rankcount/model.hpp"
#include "rankcount/rankgen.hpp"
#include "rankcount/trainer.hpp"

using namespace rankcount;

namespace {

ag::Tensor random_tensor(ag::Shape shape, std::uint64_t seed, bool requires_grad = false) {
  Rng rng(seed);
  std::vector<double> values(static_cast<std::size_t>(ag::element_count(shape)));
  for (auto& v : values) v = rng.uniform(-1.0, 1.0);
  return ag::Tensor::from_values(std::move(shape), std::move(values), requires_grad);
}

void BM_Conv2dForward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  auto x = random_tensor({1, c, 64, 64}, 1);
  auto k = random_tensor({c, c, 3, 3}, 2);
  for (auto _ : state) {
    auto y = ag::conv2d(x, k, 1, 1);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 64 * 64 * 9ll * c * c);
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16)->Arg(32);

void BM_Conv2dBackward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  auto x = random_tensor({1, c, 64, 64}, 1, true);
  auto k = random_tensor({c, c, 3, 3}, 2, true);
  for (auto _ : state) {
    auto loss = ag::sum_all(ag::conv2d(x, k, 1, 1));
    ag::backward(loss);
    x.zero_grad();
    k.zero_grad();
  }
}
BENCHMARK(BM_Conv2dBackward)->Arg(8)->Arg(16);

void BM_NetForward(benchmark::State& state) {
  ModelConfig config;
  config.widths = {8, 16, 32};
  Rng rng(3);
  auto net = CountingNet::init(config, rng);
  auto batch = random_tensor({8, 1, 64, 64}, 4);
  for (auto _ : state) {
    auto y = net.forward(batch);
    benchmark::DoNotOptimize(y.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_NetForward);

void BM_RenderDensity(benchmark::State& state) {
  Rng rng(5);
  PointAnnotation ann;
  ann.image_id = "bench";
  ann.width = ann.height = 512;
  for (int i = 0; i < 200; ++i) {
    ann.points.push_back({rng.uniform(0.0, 512.0), rng.uniform(0.0, 512.0)});
  }
  for (auto _ : state) {
    auto map = render_density(ann, 15.0, 32, 32);
    benchmark::DoNotOptimize(map.cells.data());
  }
  state.SetItemsProcessed(state.iterations() * 200);
}
BENCHMARK(BM_RenderDensity);

void BM_GenerateChain(benchmark::State& state) {
  ChainParams params;
  Rng rng(6);
  for (auto _ : state) {
    auto chain = generate_chain(1024, 768, params, rng);
    benchmark::DoNotOptimize(chain.sides.data());
  }
}
BENCHMARK(BM_GenerateChain);

void BM_AssembleMixedBatch(benchmark::State& state) {
  SceneParams sp;
  sp.width = sp.height = 192;
  sp.min_count = 5;
  sp.max_count = 60;
  auto labeled = generate_corpus(sp, 10, 7);
  std::vector<RankedChain> chains;
  MemoryImageStore store;
  ChainParams cp;
  for (int i = 0; i < 10; ++i) {
    Rng rng = Rng::stream(8, "u", static_cast<std::uint64_t>(i));
    auto scene = generate_scene(sp, rng);
    auto chain = generate_chain(192, 192, cp, rng);
    chain.image_id = "u" + std::to_string(i);
    chains.push_back(std::move(chain));
    store.put("u" + std::to_string(i), std::move(scene.image));
  }
  DataSources sources{&labeled, &chains, &store};
  BatchConfig bc;
  bc.patch.input_size = 64;
  bc.patch.output_stride = 8;
  bc.patch.max_side = 96;
  Rng rng(9);
  for (auto _ : state) {
    auto batch = assemble_batch(BatchKind::mixed, sources, bc, rng);
    benchmark::DoNotOptimize(batch.images.values().data());
  }
}
BENCHMARK(BM_AssembleMixedBatch);

void BM_BilinearResize(benchmark::State& state) {
  Rng rng(10);
  Image img;
  img.width = img.height = 192;
  img.pixels.resize(192 * 192);
  for (auto& v : img.pixels) v = rng.uniform(0.0, 1.0);
  for (auto _ : state) {
    auto out = resize_bilinear(img, 64, 64);
    benchmark::DoNotOptimize(out.pixels.data());
  }
}
BENCHMARK(BM_BilinearResize);

}  // namespace

BENCHMARK_MAIN();
