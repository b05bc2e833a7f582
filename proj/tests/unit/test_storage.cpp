#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>

#include <json.hpp>

#include "softseg/error.hpp"
#include "softseg/layer_ops.hpp"
#include "softseg/storage.hpp"
#include "toy_data.hpp"

using namespace softseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("softseg_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::optional<ErrorCode> code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

double max_composite_error(const LayerStack& a, const LayerStack& b) {
  const Image ca = compose(a), cb = compose(b);
  double worst = 0.0;
  for (std::size_t i = 0; i < ca.data.size(); ++i) worst = std::max(worst, std::abs(double(ca.data[i]) - cb.data[i]));
  return worst;
}

}  // namespace

TEST_CASE("quantization rounds half away from zero") {
  CHECK(quantize8(0.0f) == 0);
  CHECK(quantize8(1.0f) == 255);
  CHECK(quantize8(0.5f / 255.0f) == 1);
  CHECK(quantize8(1.5f / 255.0f) == 2);
  CHECK(quantize8(2.5f / 255.0f) == 3);
  CHECK(quantize8(-0.2f) == 0);
  CHECK(quantize8(1.7f) == 255);
}

TEST_CASE("image round trip") {
  TempDir dir("image");
  Image img = testing::random_image(7, 9, 1);
  for (float& v : img.data) v = quantize8(v) / 255.0f;
  save_image(img, dir / "a.png");
  const Image back = load_image(dir / "a.png");
  REQUIRE(back.height == 7);
  REQUIRE(back.width == 9);
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == doctest::Approx(img.data[i]).epsilon(1e-6));

  CHECK(code_of([&] { load_image(dir / "missing.png"); }) == ErrorCode::kIo);
  const std::vector<std::uint8_t> junk = {1, 2, 3, 4};
  CHECK(code_of([&] { decode_image(junk); }) == ErrorCode::kParse);
}

TEST_CASE("palette files") {
  TempDir dir("palette");
  const Palette p = testing::random_palette(4, 2);
  save_palette_file(p, dir / "p.txt");
  const Palette back = load_palette_file(dir / "p.txt");
  REQUIRE(back.size() == 4);
  for (int i = 0; i < 4; ++i)
    for (int c = 0; c < 3; ++c) CHECK(std::abs(back.colors[i][c] - p.colors[i][c]) <= 0.5f / 255.0f + 1e-6f);
}

TEST_CASE("layer export") {
  for (int k : {2, 5}) {
    const LayerStack s = testing::random_stack(k, 12, 10, 30 + k);

    SUBCASE("8-bit composite stays within one level") {
      const LayerStack back = decode_layers(encode_layers(s), s.palette);
      CHECK(max_composite_error(s, back) <= 1.0 / 255.0 + 1e-6);
      for (std::size_t px = 0; px < back.pixels(); ++px) {
        double sum = 0.0;
        for (int i = 0; i < k; ++i) sum += back.alphas.at(i, px);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
      }
    }
    SUBCASE("16-bit is finer") {
      const LayerStack back = decode_layers(encode_layers(s, true), s.palette);
      CHECK(max_composite_error(s, back) <= 1.0 / 65535.0 + 1e-6);
    }
  }

  SUBCASE("directory round trip with manifest") {
    TempDir dir("layers");
    const LayerStack s = testing::random_stack(3, 8, 8, 40);
    ExportOptions opt;
    opt.options_json = R"({"guided_filter":true})";
    opt.weights_hash = "abc";
    const std::string manifest_path = save_layers(s, dir.path.string(), opt);
    CHECK(fs::exists(manifest_path));
    for (int i = 0; i < 3; ++i) CHECK(fs::exists(dir / ("layer_0" + std::to_string(i) + ".png")));

    const auto j = nlohmann::json::parse(std::ifstream(manifest_path));
    CHECK(j["k"] == 3);
    CHECK(j["image_size"]["width"] == 8);
    CHECK(j["weights_hash"] == "abc");
    CHECK(j["options"]["guided_filter"] == true);
    CHECK(j["palette"].size() == 3);

    LayerManifest m;
    const LayerStack back = load_layers(dir.path.string(), &m);
    CHECK(m.k == 3);
    CHECK(max_composite_error(s, back) <= 1.0 / 255.0 + 1e-6);
  }
}

TEST_CASE("weights serialization") {
  const ModelWeights w = ModelWeights::create(3, 7);
  const auto bytes = serialize_weights(w);
  REQUIRE(bytes.size() > 16);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "SSEG");

  SUBCASE("round trip is byte identical") {
    const Checkpoint c = deserialize_weights(bytes);
    CHECK(c.weights.k == 3);
    CHECK_FALSE(c.optimizer.has_value());
    CHECK(serialize_weights(c.weights) == bytes);
    CHECK(weights_hash(c.weights) == weights_hash(w));
    CHECK(weights_hash(w).size() == 64);
  }
  SUBCASE("optimizer state survives") {
    nn::OptimizerState st;
    st.step_count = 17;
    st.config.lr = 1e-3f;
    ModelWeights copy = w;
    UNet::Grads ga = copy.alpha.zero_grads(), gr = copy.residue.zero_grads();
    for (auto& slot : copy.alpha.param_slots("alpha.", ga)) {
      st.first_moment.push_back(nn::Tensor(slot.value->shape(), 0.125f));
      st.second_moment.push_back(nn::Tensor(slot.value->shape(), 0.25f));
    }
    for (auto& slot : copy.residue.param_slots("residue.", gr)) {
      st.first_moment.push_back(nn::Tensor(slot.value->shape(), -0.5f));
      st.second_moment.push_back(nn::Tensor(slot.value->shape(), 0.5f));
    }
    const auto with_opt = serialize_weights(w, &st);
    const Checkpoint c = deserialize_weights(with_opt);
    REQUIRE(c.optimizer.has_value());
    CHECK(c.optimizer->step_count == 17);
    CHECK(c.optimizer->config.lr == 1e-3f);
    CHECK(c.optimizer->first_moment.back()[0] == -0.5f);
    CHECK(serialize_weights(c.weights, &*c.optimizer) == with_opt);
    // The hash covers weights only.
    CHECK(weights_hash(c.weights) == weights_hash(w));
  }
  SUBCASE("corrupted containers are rejected") {
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK(code_of([&] { deserialize_weights(bad_magic); }) == ErrorCode::kParse);
    const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + bytes.size() / 2);
    CHECK(code_of([&] { deserialize_weights(truncated); }) == ErrorCode::kParse);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK(code_of([&] { deserialize_weights(trailing); }) == ErrorCode::kParse);
    auto bad_k = bytes;
    bad_k[8] = 99;  // K field
    CHECK(code_of([&] { deserialize_weights(bad_k); }) == ErrorCode::kParse);
  }
  SUBCASE("files") {
    TempDir dir("weights");
    save_weights(dir / "m.sseg", w);
    CHECK(read_file(dir / "m.sseg") == bytes);
    CHECK(weights_hash(load_weights(dir / "m.sseg")) == weights_hash(w));
    try {
      load_weights(dir / "none.sseg");
      FAIL("expected an I/O error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kIo);
      CHECK(std::string(e.what()).find("none.sseg") != std::string::npos);
    }
  }
}

TEST_CASE("encodings") {
  const std::string text = "soft layers";
  const std::vector<std::uint8_t> bytes(text.begin(), text.end());
  CHECK(base64_encode(bytes) == "c29mdCBsYXllcnM=");
  CHECK(base64_decode("c29mdCBsYXllcnM=") == bytes);
  CHECK(base64_decode("c29m\ndCBs YXllcnM=") == bytes);
  CHECK(base64_decode("").empty());
  CHECK(code_of([] { base64_decode("abc"); }) == ErrorCode::kParse);
  CHECK(code_of([] { base64_decode("ab!d"); }) == ErrorCode::kParse);

  std::mt19937 rng(3);
  for (int len : {1, 2, 3, 4, 100}) {
    std::vector<std::uint8_t> v(len);
    for (auto& b : v) b = static_cast<std::uint8_t>(rng());
    CHECK(base64_decode(base64_encode(v)) == v);
  }
  CHECK(sha256_hex({}) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  const std::string abc = "abc";
  CHECK(sha256_hex(std::vector<std::uint8_t>(abc.begin(), abc.end())) ==
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
