#include <bit>
#include <cstring>

#include "softseg/error.hpp"
#include "softseg/storage.hpp"

namespace softseg {
namespace {

static_assert(std::endian::native == std::endian::little, "the SSEG writer assumes a little-endian host");

constexpr char kMagic[4] = {'S', 'S', 'E', 'G'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kHasOptimizer = 1;

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  void blob(const std::string& name, const nn::Tensor& t) {
    put(static_cast<std::uint32_t>(name.size()));
    put_bytes(name.data(), name.size());
    put(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) put(static_cast<std::uint32_t>(d));
    put_bytes(t.raw(), t.numel() * sizeof(float));
  }
  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T v;
    std::memcpy(&v, need(sizeof(T)), sizeof(T));
    return v;
  }
  std::string name() {
    const auto n = get<std::uint32_t>();
    if (n > 256) fail(ErrorCode::kParse, "weights: blob name too long");
    const auto* p = need(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  // Reads one blob and checks it against the expected name and shape.
  void blob(const std::string& expected, nn::Tensor& into) {
    const std::string got = name();
    if (got != expected) fail(ErrorCode::kParse, "weights: expected blob '" + expected + "', found '" + got + "'");
    const auto rank = get<std::uint32_t>();
    if (rank != into.rank()) fail(ErrorCode::kParse, "weights: blob '" + got + "' has the wrong rank");
    for (std::uint32_t d = 0; d < rank; ++d) {
      if (get<std::uint32_t>() != static_cast<std::uint32_t>(into.dim(d))) {
        fail(ErrorCode::kParse, "weights: blob '" + got + "' has shape different from " +
                                    nn::shape_string(into.shape()));
      }
    }
    std::memcpy(into.raw(), need(into.numel() * sizeof(float)), into.numel() * sizeof(float));
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::uint8_t* need(std::size_t n) {
    if (bytes_.size() - pos_ < n) fail(ErrorCode::kParse, "weights: file is truncated");
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct NamedTensor {
  std::string name;
  nn::Tensor* tensor;
};

// Canonical blob order: per network, per layer, weight, bias, then running
// statistics for batchnorm layers.
std::vector<NamedTensor> model_tensors(ModelWeights& w) {
  std::vector<NamedTensor> out;
  for (auto [prefix, net] : {std::pair<const char*, UNet*>{"alpha.", &w.alpha}, {"residue.", &w.residue}}) {
    auto& layers = net->layers();
    for (int i = 0; i < UNet::kLayerCount; ++i) {
      const std::string base = std::string(prefix) + UNet::layer_name(i);
      out.push_back({base + ".weight", &layers[i].weight});
      out.push_back({base + ".bias", &layers[i].bias});
      if (layers[i].kind == nn::LayerKind::kBatchNorm) {
        out.push_back({base + ".running_mean", &layers[i].running_mean});
        out.push_back({base + ".running_var", &layers[i].running_var});
      }
    }
  }
  return out;
}

// Trainable tensors in the order the trainer hands them to adam_step.
std::vector<std::string> trainable_names() {
  std::vector<std::string> out;
  for (const char* prefix : {"alpha.", "residue."}) {
    for (int i = 0; i < UNet::kLayerCount; ++i) {
      out.push_back(std::string(prefix) + UNet::layer_name(i) + ".weight");
      out.push_back(std::string(prefix) + UNet::layer_name(i) + ".bias");
    }
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> serialize_weights(const ModelWeights& weights, const nn::OptimizerState* optimizer) {
  ModelWeights& w = const_cast<ModelWeights&>(weights);  // model_tensors only reads through these pointers
  Writer out;
  out.put_bytes(kMagic, 4);
  out.put(kVersion);
  out.put(static_cast<std::uint32_t>(w.k));
  out.put(static_cast<std::uint32_t>(w.alpha.in_channels()));
  out.put(static_cast<std::uint32_t>(w.alpha.out_channels()));
  out.put(static_cast<std::uint32_t>(w.residue.in_channels()));
  out.put(static_cast<std::uint32_t>(w.residue.out_channels()));
  const bool with_opt = optimizer && !optimizer->first_moment.empty();
  out.put(with_opt ? kHasOptimizer : 0u);
  const auto tensors = model_tensors(w);
  out.put(static_cast<std::uint32_t>(tensors.size()));
  for (const NamedTensor& t : tensors) out.blob(t.name, *t.tensor);
  if (with_opt) {
    const auto names = trainable_names();
    if (optimizer->first_moment.size() != names.size() || optimizer->second_moment.size() != names.size()) {
      fail(ErrorCode::kInvalidArgument, "weights: optimizer state does not cover every trainable tensor");
    }
    out.put(static_cast<double>(optimizer->config.lr));
    out.put(static_cast<double>(optimizer->config.beta1));
    out.put(static_cast<double>(optimizer->config.beta2));
    out.put(static_cast<double>(optimizer->config.epsilon));
    out.put(static_cast<std::int64_t>(optimizer->step_count));
    for (std::size_t i = 0; i < names.size(); ++i) out.blob("m:" + names[i], optimizer->first_moment[i]);
    for (std::size_t i = 0; i < names.size(); ++i) out.blob("v:" + names[i], optimizer->second_moment[i]);
  }
  return out.take();
}

Checkpoint deserialize_weights(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(in.get<std::uint8_t>());
  if (std::memcmp(magic, kMagic, 4) != 0) fail(ErrorCode::kParse, "weights: not an SSEG file");
  const auto version = in.get<std::uint32_t>();
  if (version != kVersion) fail(ErrorCode::kParse, "weights: unsupported version " + std::to_string(version));
  const auto k = in.get<std::uint32_t>();
  if (k < 1 || k > static_cast<std::uint32_t>(Palette::kMaxColors)) {
    fail(ErrorCode::kParse, "weights: K=" + std::to_string(k) + " outside [1,16]");
  }
  Checkpoint cp;
  cp.weights = ModelWeights::create(static_cast<int>(k), 0);
  const std::uint32_t widths[4] = {in.get<std::uint32_t>(), in.get<std::uint32_t>(), in.get<std::uint32_t>(),
                                   in.get<std::uint32_t>()};
  const std::uint32_t expected[4] = {
      static_cast<std::uint32_t>(cp.weights.alpha.in_channels()),
      static_cast<std::uint32_t>(cp.weights.alpha.out_channels()),
      static_cast<std::uint32_t>(cp.weights.residue.in_channels()),
      static_cast<std::uint32_t>(cp.weights.residue.out_channels())};
  for (int i = 0; i < 4; ++i) {
    if (widths[i] != expected[i]) fail(ErrorCode::kParse, "weights: channel widths disagree with K=" + std::to_string(k));
  }
  const auto flags = in.get<std::uint32_t>();
  const auto tensors = model_tensors(cp.weights);
  if (in.get<std::uint32_t>() != tensors.size()) fail(ErrorCode::kParse, "weights: unexpected blob count");
  for (const NamedTensor& t : tensors) in.blob(t.name, *t.tensor);
  if (flags & kHasOptimizer) {
    nn::OptimizerState opt;
    opt.config.lr = static_cast<float>(in.get<double>());
    opt.config.beta1 = static_cast<float>(in.get<double>());
    opt.config.beta2 = static_cast<float>(in.get<double>());
    opt.config.epsilon = static_cast<float>(in.get<double>());
    opt.step_count = in.get<std::int64_t>();
    const auto names = trainable_names();
    std::vector<nn::Tensor*> params;
    for (const NamedTensor& t : tensors) {
      if (t.name.find(".running_") == std::string::npos) params.push_back(t.tensor);
    }
    for (auto* moments : {&opt.first_moment, &opt.second_moment}) {
      const char* tag = moments == &opt.first_moment ? "m:" : "v:";
      for (std::size_t i = 0; i < names.size(); ++i) {
        moments->emplace_back(params[i]->shape());
        in.blob(tag + names[i], moments->back());
      }
    }
    cp.optimizer = std::move(opt);
  }
  if (!in.done()) fail(ErrorCode::kParse, "weights: trailing bytes after the last blob");
  return cp;
}

void save_weights(const std::string& path, const ModelWeights& weights, const nn::OptimizerState* optimizer) {
  write_file(path, serialize_weights(weights, optimizer));
}

Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<std::uint8_t> bytes = read_file(path);
  try {
    return deserialize_weights(bytes);
  } catch (const Error& e) {
    fail(e.code(), path + ": " + e.what());
  }
}

ModelWeights load_weights(const std::string& path) { return load_checkpoint(path).weights; }

std::string weights_hash(const ModelWeights& weights) { return sha256_hex(serialize_weights(weights)); }

}  // namespace softseg
