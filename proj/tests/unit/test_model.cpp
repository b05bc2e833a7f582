#include <doctest.h>

#include <cmath>
#include <random>

#include "reference_net.hpp"
#include "softseg/error.hpp"
#include "softseg/grad_check.hpp"
#include "softseg/layer_ops.hpp"
#include "softseg/losses.hpp"
#include "softseg/predictor.hpp"
#include "softseg/trainer.hpp"
#include "tensor_util.hpp"
#include "oracles.hpp"
#include "toy_data.hpp"
#include "warning_capture.hpp"

using namespace softseg;
using nn::Tensor;

namespace {

// Palette colors broadcast as layer colors.
std::vector<float> flat_colors(const Palette& p, std::size_t pixels) {
  std::vector<float> out;
  for (const Rgb& c : p.colors)
    for (float v : c) out.insert(out.end(), pixels, v);
  return out;
}

}  // namespace

TEST_CASE("loss values on hand-built stacks") {
  Palette p;
  p.colors = {{0.2f, 0.2f, 0.2f}};
  AlphaStack a(1, 1, 1, 1.0f);
  Image img(1, 1);
  img.set_pixel(0, {0.5f, 0.5f, 0.5f});

  SUBCASE("reconstruction is off by 0.1 per channel") {
    CHECK(loss_reconstruction(a, {0.6f, 0.6f, 0.6f}, img) == doctest::Approx(0.1));
  }
  SUBCASE("distance is the euclidean norm of the residue") {
    CHECK(loss_distance(a, p, {0.5f, 0.6f, 0.2f}) == doctest::Approx(0.5));
  }
  SUBCASE("palette-only reconstruction") {
    CHECK(loss_alpha_regularization(a, p, img) == doctest::Approx(0.3));
  }
  SUBCASE("total is the weighted sum") {
    const std::vector<float> u = {0.5f, 0.6f, 0.2f};
    const LossTerms t = loss_total(a, p, u, img, LossWeights{1.0, 0.5});
    CHECK(t.total == doctest::Approx(t.reconstruction + t.regularization + 0.5 * t.distance));
    CHECK(t.reconstruction == doctest::Approx(loss_reconstruction(a, u, img)));
    CHECK(t.distance == doctest::Approx(0.5));
  }
}

TEST_CASE("oracle layer colors reconstruct exactly") {
  // u_i = c for every layer: any normalized alphas compose to the image.
  const Image img = testing::random_image(6, 5, 3);
  const AlphaStack a = normalize_alpha(testing::random_alphas(3, 6, 5, 4));
  std::vector<float> u;
  for (int i = 0; i < 3; ++i) u.insert(u.end(), img.data.begin(), img.data.end());
  CHECK(loss_reconstruction(a, u, img) < 1e-7);

  const Palette p = testing::random_palette(3, 5);
  CHECK(loss_distance(a, p, flat_colors(p, img.pixels())) == 0.0);
}

TEST_CASE("loss gradients match central differences") {
  const int n = 2, k = 3, h = 4, w = 4;
  Tensor images = testing::random_tensor({n, 3, h, w}, 11, 0.0f, 1.0f);
  std::vector<Palette> palettes = {testing::random_palette(k, 12), testing::random_palette(k, 13)};
  Tensor alphas({n, k, h, w});
  Tensor colors({n, 3 * k, h, w});
  std::mt19937 rng(14);
  std::uniform_real_distribution<float> unit(0.05f, 0.95f);
  for (float& v : alphas.data()) v = unit(rng);
  for (float& v : colors.data()) v = unit(rng);

  const LossWeights lw{1.0, 0.5};
  LossGrads grads;
  compute_losses(images, palettes, alphas, colors, lw, &grads);
  nn::GradCheckOptions opt;
  opt.step = 1e-4f;
  const nn::GradTarget targets[] = {{"alphas", &alphas, &grads.d_alphas}, {"colors", &colors, &grads.d_colors}};
  const auto rep = nn::grad_check(
      [&] { return compute_losses(images, palettes, alphas, colors, lw, nullptr).total; }, targets, opt);
  INFO(rep.worst_target << " " << rep.max_rel_error << " at " << rep.worst_entry);
  CHECK(rep.within(1e-3));
}

TEST_CASE("loss shape checks") {
  const Tensor images({1, 3, 4, 4});
  const Tensor alphas({1, 2, 4, 4});
  CHECK_THROWS_AS(compute_losses(images, {testing::random_palette(2, 1)}, alphas, Tensor({1, 5, 4, 4}), {}, nullptr),
                  Error);
  try {
    compute_losses(images, {testing::random_palette(3, 1)}, alphas, Tensor({1, 6, 4, 4}), {}, nullptr);
    FAIL("expected a palette mismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kPaletteMismatch);
  }
}

TEST_CASE("predictor outputs") {
  const int k = 3;
  const ModelWeights w = ModelWeights::create(k, 21);
  CHECK(w.alpha.in_channels() == 3 + 3 * k);
  CHECK(w.alpha.out_channels() == k);
  CHECK(w.residue.in_channels() == 3 + 4 * k);
  CHECK(w.residue.out_channels() == 3 * k);

  const Image img = testing::toy_image(16, k, 22);
  const Palette p = testing::random_palette(k, 23);
  const AlphaStack raw = predict_alpha(img, p, w);
  CHECK(raw.k == k);
  for (float v : raw.values) CHECK((v > 0.0f && v < 1.0f));

  const AlphaStack a = normalize_alpha(raw);
  const ResidueStack r = predict_residues(img, p, a, w);
  CHECK(r.values.size() == static_cast<std::size_t>(3 * k) * img.pixels());
  for (float v : r.values) CHECK((v > -1.0f && v < 1.0f));
  for (float v : layer_colors(p, r)) CHECK((v >= 0.0f && v <= 1.0f));

  SUBCASE("unnormalized alphas are rejected") {
    CHECK_THROWS_AS(predict_residues(img, p, raw, w), Error);
  }
  SUBCASE("wrong palette size") {
    try {
      predict_alpha(img, testing::random_palette(k - 1, 1), w);
      FAIL("expected a palette mismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kPaletteMismatch);
    }
  }
  SUBCASE("odd sizes are padded with a warning") {
    const Image odd = testing::toy_image(13, k, 24);
    testing::WarningCapture warnings;
    const AlphaStack o = predict_alpha(odd, p, w);
    CHECK(o.height == 13);
    CHECK(o.width == 13);
    CHECK(warnings.messages.size() == 1);
  }
}

TEST_CASE("end-to-end gradients of the training objective") {
  // Both networks, the normalization, the clipped colors and all three loss
  // terms, against finite differences of an independent double-precision
  // forward pass. K = 2 at 8x8.
  const int k = 2, batch = 4;
  const std::uint64_t seed = 1;
  ModelWeights w = ModelWeights::create(k, seed);
  std::vector<Image> images;
  std::vector<Palette> palettes;
  for (int b = 0; b < batch; ++b) {
    images.push_back(testing::toy_image(8, k, seed * 10 + b));
    palettes.push_back(testing::random_palette(k, seed * 10 + 5 + b));
  }
  const LossWeights lw{1.0, 0.5};
  PipelineGrads grads = PipelineGrads::zeros_like(w);
  const double lib_loss = pipeline_step(w, images_to_tensor(images), palettes, lw, &grads, false).total;

  testing::ReferencePipeline ref(w, images, palettes, lw);
  const double ref_loss = ref.loss();
  CHECK(std::abs(lib_loss - ref_loss) < 1e-5 * ref_loss);
  // Finite differences are meaningless where a batchnorm channel sits near
  // its epsilon; this fixture is chosen away from that regime.
  REQUIRE(ref.min_active_bn_std() > 1e-2);

  const testing::GradComparison cmp = testing::compare_with_reference(grads, ref, 1e-6, 24);
  const double worst = cmp.worst;
  const std::string worst_name = cmp.worst_tensor;
  INFO("worst tensor " << worst_name << " relative error " << worst);
  CHECK(worst < 5e-3);
}
