#include <benchmark/benchmark.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "softseg/layer_ops.hpp"
#include "softseg/layers.hpp"
#include "softseg/palette.hpp"
#include "softseg/trainer.hpp"
#include "softseg/unmixer.hpp"

using namespace softseg;

namespace {

nn::Tensor noise(const nn::Shape& shape, std::uint64_t seed) {
  nn::Tensor t(shape);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : t.data()) v = u(rng);
  return t;
}

Image noise_image(int size, std::uint64_t seed) {
  Image img(size, size);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  // Smooth-ish content so K-means has structure to find.
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) img.at(c, y, x) = 0.5f + 0.4f * std::sin(0.05f * (x + 2 * c * y)) + 0.05f * u(rng);
  for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

void BM_Conv3x3(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0)), size = static_cast<int>(state.range(1));
  nn::LayerParams p = nn::LayerParams::conv(ch, ch, 1);
  nn::init_layer(p, 1);
  const nn::Tensor x = noise({1, ch, size, size}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(nn::conv2d(x, p));
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_Conv3x3)->Args({32, 64})->Args({64, 128})->Args({128, 32})->Unit(benchmark::kMillisecond);

void BM_Deconv3x3Stride2(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0)), size = static_cast<int>(state.range(1));
  nn::LayerParams p = nn::LayerParams::deconv(ch, ch / 2, 2);
  nn::init_layer(p, 1);
  const nn::Tensor x = noise({1, ch, size, size}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(nn::deconv2d(x, p));
}
BENCHMARK(BM_Deconv3x3Stride2)->Args({128, 32})->Args({64, 64})->Unit(benchmark::kMillisecond);

void BM_UnmixPixel(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  Palette p;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (int i = 0; i < k; ++i) p.colors.push_back({u(rng), u(rng), u(rng)});
  const auto models = models_from_palette(p);
  const UnmixConfig cfg;
  std::vector<Rgb> pixels(256);
  for (Rgb& c : pixels) c = {u(rng), u(rng), u(rng)};
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(unmix_pixel(pixels[i++ % pixels.size()], models, cfg));
}
BENCHMARK(BM_UnmixPixel)->Arg(2)->Arg(4)->Arg(7)->Unit(benchmark::kMicrosecond);

void BM_GuidedFilter(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0)), r = static_cast<int>(state.range(1));
  const Image guide = noise_image(size, 4);
  std::vector<float> layer(guide.data.begin(), guide.data.begin() + guide.pixels());
  for (auto _ : state) benchmark::DoNotOptimize(guided_filter(layer, guide, r, 1e-4));
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_GuidedFilter)->Args({256, 8})->Args({512, 8})->Unit(benchmark::kMillisecond);

void BM_ExtractPalette(benchmark::State& state) {
  const Image img = noise_image(static_cast<int>(state.range(0)), 5);
  for (auto _ : state) benchmark::DoNotOptimize(extract_palette(img, 7, 0));
}
BENCHMARK(BM_ExtractPalette)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Decompose(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const ModelWeights w = ModelWeights::create(7, 1);
  const Image img = noise_image(size, 6);
  const Palette p = extract_palette(img, 7, 0);
  for (auto _ : state) benchmark::DoNotOptimize(decompose(img, p, w));
  state.SetItemsProcessed(state.iterations() * size * size);
}
BENCHMARK(BM_Decompose)->Arg(128)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const int k = 4, batch = static_cast<int>(state.range(0));
  ModelWeights w = ModelWeights::create(k, 1);
  std::vector<Image> images;
  std::vector<Palette> palettes;
  for (int b = 0; b < batch; ++b) {
    images.push_back(noise_image(64, 10 + b));
    palettes.push_back(extract_palette(images.back(), k, 0));
  }
  const nn::Tensor x = images_to_tensor(images);
  PipelineGrads g = PipelineGrads::zeros_like(w);
  for (auto _ : state) {
    g.zero();
    benchmark::DoNotOptimize(pipeline_step(w, x, palettes, LossWeights{}, &g, true));
  }
}
BENCHMARK(BM_TrainStep)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
