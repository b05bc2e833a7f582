#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "softseg/image.hpp"
#include "softseg/losses.hpp"
#include "softseg/optim.hpp"
#include "softseg/predictor.hpp"

namespace softseg {

/// Gradients of both predictors.
struct PipelineGrads {
  UNet::Grads alpha;
  UNet::Grads residue;

  static PipelineGrads zeros_like(const ModelWeights& weights);
  void zero();
  std::vector<nn::Tensor*> tensors();
};

/// One train-mode pass of the full decomposition pipeline over a batch:
/// alpha predictor -> sum normalization -> residue predictor -> clip(p + r)
/// -> losses. When `grads` is given the losses are backpropagated through
/// both networks jointly (including the path from the residue predictor's
/// alpha inputs back into the alpha predictor). Running batchnorm statistics
/// are only updated when `update_running_stats` is set.
LossTerms pipeline_step(ModelWeights& weights, const nn::Tensor& images, const std::vector<Palette>& palettes,
                        const LossWeights& loss_weights, PipelineGrads* grads, bool update_running_stats);

struct TrainConfig {
  int k = 7;
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double lambda_a = 1.0;
  double lambda_d = 0.5;
  int batch_size = 8;
  int crop_size = 64;
  int steps = 2000;
  std::uint64_t seed = 1;
  double grad_clip = 5.0;     // global-norm clip; 0 disables
  int checkpoint_interval = 0;  // steps; 0 writes only the final checkpoint
  std::string dataset_path;
  std::string weights_out;      // final weights (SSEG); empty skips
  std::string checkpoint_path;  // weights + optimizer state; empty skips
  std::string log_path;         // CSV training log; empty skips
  std::string resume_from;      // checkpoint to continue from

  /// Throws ErrorCode::kInvalidArgument naming the bad field.
  void validate() const;
  /// Sets one field from its textual value; throws on unknown keys.
  void set(const std::string& key, const std::string& value);
  /// A JSON object or "key = value" lines ('#' starts a comment).
  static TrainConfig parse(std::string_view text);
  static TrainConfig load(const std::string& path);
};

struct TrainSample {
  Image crop;
  Palette palette;  // K-means on this crop
};

/// Shuffled, seed-deterministic stream of crops over an in-memory image set.
/// Every image is resized so its shorter side equals the crop size; each draw
/// takes a random crop_size x crop_size window and extracts its palette.
class SampleStream {
 public:
  SampleStream(std::vector<Image> images, int crop_size, int k, std::uint64_t seed);

  TrainSample next();
  std::size_t size() const { return images_.size(); }
  const std::vector<Image>& images() const { return images_; }

 private:
  std::vector<Image> images_;
  int crop_;
  int k_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::vector<std::optional<Palette>> cached_;  // used when crops cover the whole image
};

/// Resizes so the shorter side equals `side` (area interpolation when
/// shrinking, bilinear when growing).
Image resize_shorter_side(const Image& image, int side);

/// Reads every decodable image in a directory (sorted by file name, non-images
/// skipped with a warning). Throws kIo for a missing directory and
/// kInvalidArgument when no image could be read.
std::vector<Image> read_image_dir(const std::string& path);

SampleStream ingest_dataset(const std::string& path, int crop_size, int k, std::uint64_t seed);

struct TrainLogRow {
  int step = 0;
  LossTerms loss;
  double seconds = 0.0;  // wall time since training started
};

struct TrainResult {
  ModelWeights weights;
  nn::OptimizerState optimizer;
  std::vector<TrainLogRow> log;
  bool halted = false;  // a non-finite loss or gradient stopped training
  std::string halt_reason;
};

/// Called after every step; returning false stops training early.
using TrainCallback = std::function<bool(const TrainLogRow&)>;

TrainResult train(const TrainConfig& config, SampleStream& samples, const TrainCallback& callback = {});
/// Ingests config.dataset_path and trains.
TrainResult train(const TrainConfig& config, const TrainCallback& callback = {});

extern const char* const kTrainLogHeader;
std::string format_log_row(const TrainLogRow& row);

}  // namespace softseg
