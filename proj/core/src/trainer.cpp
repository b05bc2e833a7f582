#include "softseg/trainer.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "softseg/error.hpp"
#include "softseg/log.hpp"
#include "softseg/palette.hpp"
#include "softseg/parallel.hpp"
#include "softseg/storage.hpp"

namespace softseg {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    T v;
    if constexpr (std::is_same_v<T, double>) {
      v = std::stod(text, &used);
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
      v = std::stoull(text, &used);
    } else {
      v = std::stoi(text, &used);
    }
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::kParse, "config: '" + key + "' expects a number, got '" + text + "'");
  }
}

Image crop_at(const Image& src, int y0, int x0, int size) {
  Image out(size, size);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < size; ++y) {
      std::copy_n(src.plane(c) + static_cast<std::size_t>(y0 + y) * src.width + x0, size,
                  out.plane(c) + static_cast<std::size_t>(y) * size);
    }
  }
  return out;
}

}  // namespace

const char* const kTrainLogHeader = "step,loss_total,loss_r,loss_a,loss_d,seconds";

void TrainConfig::validate() const {
  auto bad = [](const std::string& what) { fail(ErrorCode::kInvalidArgument, "train config: " + what); };
  if (k < 1 || k > Palette::kMaxColors) bad("k must be in [1,16]");
  if (!(lr > 0.0) || !std::isfinite(lr)) bad("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) bad("beta1 must be in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) bad("beta2 must be in [0,1)");
  if (!(lambda_a >= 0.0) || !(lambda_d >= 0.0)) bad("lambda_a and lambda_d must be nonnegative");
  if (batch_size < 1) bad("batch_size must be positive");
  if (crop_size < 8 || crop_size % 8 != 0) bad("crop_size must be a positive multiple of 8");
  if (batch_size * crop_size * crop_size < 2 * 64) bad("batch too small for batchnorm at the bottleneck");
  if (steps < 0) bad("steps must be nonnegative");
  if (!(grad_clip >= 0.0)) bad("grad_clip must be nonnegative");
  if (checkpoint_interval < 0) bad("checkpoint_interval must be nonnegative");
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  if (key == "k") k = parse_number<int>(key, value);
  else if (key == "lr") lr = parse_number<double>(key, value);
  else if (key == "beta1") beta1 = parse_number<double>(key, value);
  else if (key == "beta2") beta2 = parse_number<double>(key, value);
  else if (key == "lambda_a") lambda_a = parse_number<double>(key, value);
  else if (key == "lambda_d") lambda_d = parse_number<double>(key, value);
  else if (key == "batch_size") batch_size = parse_number<int>(key, value);
  else if (key == "crop_size") crop_size = parse_number<int>(key, value);
  else if (key == "steps") steps = parse_number<int>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "grad_clip") grad_clip = parse_number<double>(key, value);
  else if (key == "checkpoint_interval") checkpoint_interval = parse_number<int>(key, value);
  else if (key == "dataset_path" || key == "dataset") dataset_path = value;
  else if (key == "weights_out" || key == "output") weights_out = value;
  else if (key == "checkpoint_path") checkpoint_path = value;
  else if (key == "log_path") log_path = value;
  else if (key == "resume_from") resume_from = value;
  else fail(ErrorCode::kParse, "config: unknown key '" + key + "'");
}

TrainConfig TrainConfig::parse(std::string_view text) {
  TrainConfig cfg;
  const std::string body = trim(text);
  if (!body.empty() && body.front() == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kParse, std::string("config: ") + e.what());
    }
    for (const auto& [key, v] : j.items()) cfg.set(key, v.is_string() ? v.get<std::string>() : v.dump());
    return cfg;
  }
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    const std::size_t end = std::min(body.find('\n', pos), body.size());
    std::string line(body.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;  // blank, or a TOML table header
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(ErrorCode::kParse, "config line " + std::to_string(line_no) + ": expected key = value");
    std::string value = trim(std::string_view(line).substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }
    cfg.set(trim(std::string_view(line).substr(0, eq)), value);
  }
  return cfg;
}

TrainConfig TrainConfig::load(const std::string& path) {
  const auto bytes = read_file(path);
  try {
    return parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  } catch (const Error& e) {
    fail(e.code(), path + ": " + e.what());
  }
}

Image resize_shorter_side(const Image& image, int side) {
  const int shorter = std::min(image.height, image.width);
  if (shorter == side) return image;
  const double scale = static_cast<double>(side) / shorter;
  const int h = image.height == shorter ? side : std::max(side, static_cast<int>(std::lround(image.height * scale)));
  const int w = image.width == shorter ? side : std::max(side, static_cast<int>(std::lround(image.width * scale)));
  cv::Mat src(image.height, image.width, CV_32FC3);
  for (int y = 0; y < image.height; ++y) {
    auto* row = src.ptr<cv::Vec3f>(y);
    for (int x = 0; x < image.width; ++x) row[x] = cv::Vec3f(image.at(0, y, x), image.at(1, y, x), image.at(2, y, x));
  }
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(w, h), 0, 0, side < shorter ? cv::INTER_AREA : cv::INTER_LINEAR);
  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    const auto* row = dst.ptr<cv::Vec3f>(y);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) out.at(c, y, x) = std::clamp(row[x][c], 0.0f, 1.0f);
    }
  }
  return out;
}

SampleStream::SampleStream(std::vector<Image> images, int crop_size, int k, std::uint64_t seed)
    : crop_(crop_size), k_(k), rng_(seed) {
  if (images.empty()) fail(ErrorCode::kInvalidArgument, "sample stream: no images");
  if (crop_size < 1) fail(ErrorCode::kInvalidArgument, "sample stream: crop size must be positive");
  for (Image& img : images) images_.push_back(resize_shorter_side(img, crop_size));
  order_.resize(images_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  cursor_ = order_.size();
  cached_.resize(images_.size());
}

TrainSample SampleStream::next() {
  if (cursor_ == order_.size()) {
    std::shuffle(order_.begin(), order_.end(), rng_);
    cursor_ = 0;
  }
  const std::size_t idx = order_[cursor_++];
  const Image& img = images_[idx];
  const int y0 = std::uniform_int_distribution<int>(0, img.height - crop_)(rng_);
  const int x0 = std::uniform_int_distribution<int>(0, img.width - crop_)(rng_);
  const std::uint64_t palette_seed = rng_();
  TrainSample s;
  if (img.height == crop_ && img.width == crop_) {
    // The crop is the whole image, so its palette never changes.
    if (!cached_[idx]) cached_[idx] = extract_palette(img, k_, static_cast<std::uint64_t>(idx));
    s.crop = img;
    s.palette = *cached_[idx];
  } else {
    s.crop = crop_at(img, y0, x0, crop_);
    s.palette = extract_palette(s.crop, k_, palette_seed);
  }
  return s;
}

std::vector<Image> read_image_dir(const std::string& path) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(path, ec)) fail(ErrorCode::kIo, "dataset directory not found: " + path);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path, ec)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  if (ec) fail(ErrorCode::kIo, "cannot list " + path + ": " + ec.message());
  std::sort(files.begin(), files.end());
  std::vector<Image> images;
  for (const auto& f : files) {
    try {
      images.push_back(load_image(f.string()));
    } catch (const Error& e) {
      warn("skipping " + f.string() + ": " + e.what());
    }
  }
  if (images.empty()) fail(ErrorCode::kInvalidArgument, "no readable images in " + path);
  return images;
}

SampleStream ingest_dataset(const std::string& path, int crop_size, int k, std::uint64_t seed) {
  return SampleStream(read_image_dir(path), crop_size, k, seed);
}

std::string format_log_row(const TrainLogRow& row) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d,%.8g,%.8g,%.8g,%.8g,%.3f", row.step, row.loss.total, row.loss.reconstruction,
                row.loss.regularization, row.loss.distance, row.seconds);
  return buf;
}

TrainResult train(const TrainConfig& config, SampleStream& samples, const TrainCallback& callback) {
  config.validate();
  retain_heap_memory();
  TrainResult result;
  if (!config.resume_from.empty()) {
    Checkpoint cp = load_checkpoint(config.resume_from);
    if (cp.weights.k != config.k) fail(ErrorCode::kPaletteMismatch, "resume checkpoint has a different K");
    result.weights = std::move(cp.weights);
    if (cp.optimizer) result.optimizer = std::move(*cp.optimizer);
  } else {
    result.weights = ModelWeights::create(config.k, config.seed);
  }
  result.optimizer.config = {static_cast<float>(config.lr), static_cast<float>(config.beta1),
                             static_cast<float>(config.beta2), result.optimizer.config.epsilon};

  std::ofstream log_file;
  if (!config.log_path.empty()) {
    log_file.open(config.log_path, std::ios::trunc);
    if (!log_file) fail(ErrorCode::kIo, "cannot write " + config.log_path);
    log_file << kTrainLogHeader << '\n';
  }
  auto write_checkpoint = [&](const ModelWeights& w) {
    if (!config.checkpoint_path.empty()) save_weights(config.checkpoint_path, w, &result.optimizer);
  };

  const LossWeights loss_weights{config.lambda_a, config.lambda_d};
  PipelineGrads grads = PipelineGrads::zeros_like(result.weights);
  const auto start = std::chrono::steady_clock::now();
  std::vector<Image> batch(config.batch_size);
  std::vector<Palette> palettes(config.batch_size);

  for (int step = 0; step < config.steps; ++step) {
    for (int b = 0; b < config.batch_size; ++b) {
      TrainSample s = samples.next();
      batch[b] = std::move(s.crop);
      palettes[b] = std::move(s.palette);
    }
    const nn::Tensor images = images_to_tensor(batch);
    ModelWeights last_good = result.weights;
    grads.zero();
    TrainLogRow row;
    row.step = step;
    row.loss = pipeline_step(result.weights, images, palettes, loss_weights, &grads, true);
    try {
      if (!std::isfinite(row.loss.total)) fail(ErrorCode::kNumeric, "non-finite loss");
      const std::vector<nn::Tensor*> g = grads.tensors();
      if (config.grad_clip > 0.0) nn::clip_grad_norm(g, config.grad_clip);
      std::vector<nn::ParamSlot> slots = result.weights.alpha.param_slots("alpha.", grads.alpha);
      const auto residue_slots = result.weights.residue.param_slots("residue.", grads.residue);
      slots.insert(slots.end(), residue_slots.begin(), residue_slots.end());
      nn::adam_step(slots, result.optimizer);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNumeric) throw;
      result.weights = std::move(last_good);
      result.halted = true;
      result.halt_reason = "step " + std::to_string(step) + ": " + e.what();
      warn("training halted at " + result.halt_reason + "; keeping the last good weights");
      break;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(row);
    if (log_file) log_file << format_log_row(row) << '\n' << std::flush;
    if (config.checkpoint_interval > 0 && (step + 1) % config.checkpoint_interval == 0) {
      write_checkpoint(result.weights);
    }
    if (callback && !callback(row)) break;
  }
  write_checkpoint(result.weights);
  if (!config.weights_out.empty()) save_weights(config.weights_out, result.weights);
  return result;
}

TrainResult train(const TrainConfig& config, const TrainCallback& callback) {
  config.validate();
  if (config.dataset_path.empty()) fail(ErrorCode::kInvalidArgument, "train config: dataset_path is required");
  SampleStream samples = ingest_dataset(config.dataset_path, config.crop_size, config.k, config.seed);
  return train(config, samples, callback);
}

}  // namespace softseg
