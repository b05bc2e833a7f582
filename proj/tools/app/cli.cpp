#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <ostream>

#include "common.hpp"
#include "service.hpp"
#include "softseg/error.hpp"
#include "softseg/layer_ops.hpp"
#include "softseg/metrics.hpp"
#include "softseg/palette.hpp"
#include "softseg/parallel.hpp"
#include "softseg/storage.hpp"
#include "softseg/trainer.hpp"
#include "softseg/unmixer.hpp"

namespace softseg::app {
namespace {

namespace fs = std::filesystem;

// Smooth gradients under a few flat discs; deterministic in size only.
Image bench_image(int size) {
  Image img(size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const float u = static_cast<float>(x) / size, v = static_cast<float>(y) / size;
      Rgb c{0.2f + 0.6f * u, 0.3f + 0.4f * v, 0.5f + 0.3f * std::sin(6.0f * u * v)};
      for (int d = 0; d < 4; ++d) {
        const float cx = 0.2f + 0.2f * d, cy = 0.3f + 0.15f * d;
        if ((u - cx) * (u - cx) + (v - cy) * (v - cy) < 0.01f) c = {0.1f * d, 0.9f - 0.2f * d, 0.25f};
      }
      for (int ch = 0; ch < 3; ++ch) img.at(ch, y, x) = std::clamp(c[ch], 0.0f, 1.0f);
    }
  }
  return img;
}

LayerMask parse_mask_arg(const std::string& spec) {
  // LAYER:FILE or LAYER:FILE:MODE
  const auto first = spec.find(':');
  if (first == std::string::npos) fail(ErrorCode::kParse, "--mask expects LAYER:FILE[:multiply|set], got '" + spec + "'");
  LayerMask m;
  try {
    m.layer = std::stoi(spec.substr(0, first));
  } catch (const std::exception&) {
    fail(ErrorCode::kParse, "--mask layer index is not a number in '" + spec + "'");
  }
  std::string file = spec.substr(first + 1);
  if (const auto last = file.rfind(':'); last != std::string::npos) {
    const std::string mode = file.substr(last + 1);
    if (mode == "set" || mode == "multiply") {
      m.mode = parse_mask_mode(mode);
      file.erase(last);
    }
  }
  m.mask = mask_from_image(load_image(file));
  return m;
}

void require_k(const Palette& palette, const ModelWeights& weights) {
  if (palette.size() != weights.k) {
    fail(ErrorCode::kPaletteMismatch, "palette has " + std::to_string(palette.size()) +
                                          " colors but the weights were trained for K=" + std::to_string(weights.k));
  }
}

}  // namespace

std::vector<BenchRow> run_bench(const ModelWeights& weights, const std::vector<int>& sizes, int repeats) {
  std::vector<BenchRow> rows;
  for (int size : sizes) {
    if (size < 8) fail(ErrorCode::kInvalidArgument, "bench sizes must be at least 8");
    const Image img = bench_image(size);
    const Palette palette = extract_palette(img, weights.k, 0);
    std::vector<double> times;
    for (int r = 0; r < std::max(1, repeats); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const LayerStack s = decompose(img, palette, weights);
      times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::sort(times.begin(), times.end());
    rows.push_back({size, times[times.size() / 2]});
  }
  return rows;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"softseg: soft color segmentation"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: all cores; 1 is fully deterministic)");

  // palette
  auto* palette_cmd = app.add_subcommand("palette", "Extract a K-means palette");
  std::string palette_image, palette_out;
  int palette_k = 7;
  std::uint64_t palette_seed = 0;
  palette_cmd->add_option("image", palette_image)->required();
  palette_cmd->add_option("--k", palette_k, "Palette size")->required();
  palette_cmd->add_option("--seed", palette_seed);
  palette_cmd->add_option("--out", palette_out, "Palette file (default: stdout)");

  // decompose
  auto* decompose_cmd = app.add_subcommand("decompose", "Decompose an image with the trained networks");
  std::string dec_image, dec_palette, dec_weights, dec_out;
  std::vector<std::string> dec_masks;
  DecomposeOptions dec_opts;
  bool sixteen = false;
  decompose_cmd->add_option("image", dec_image)->required();
  decompose_cmd->add_option("--palette", dec_palette)->required();
  decompose_cmd->add_option("--weights", dec_weights)->envname("SOFTSEG_WEIGHTS")->required();
  decompose_cmd->add_flag("--guided-filter", dec_opts.guided_filter);
  decompose_cmd->add_option("--filter-radius", dec_opts.filter_radius)->check(CLI::PositiveNumber);
  decompose_cmd->add_option("--filter-eps", dec_opts.filter_eps)->check(CLI::PositiveNumber);
  decompose_cmd->add_option("--mask", dec_masks, "LAYER:FILE[:multiply|set]");
  decompose_cmd->add_flag("--sixteen-bit", sixteen, "Write 16-bit layer PNGs");
  decompose_cmd->add_option("--out", dec_out)->required();

  // unmix
  auto* unmix_cmd = app.add_subcommand("unmix", "Per-pixel energy minimization (optimization baseline)");
  std::string unmix_image_path, unmix_palette, unmix_out;
  UnmixConfig unmix_cfg;
  double unmix_variance = 0.05 * 0.05;
  unmix_cmd->add_option("image", unmix_image_path)->required();
  unmix_cmd->add_option("--palette", unmix_palette)->required();
  unmix_cmd->add_option("--sigma", unmix_cfg.sparsity_weight, "Sparsity weight");
  unmix_cmd->add_option("--variance", unmix_variance, "Isotropic color model variance");
  unmix_cmd->add_option("--constraint-weight", unmix_cfg.color_constraint_weight);
  unmix_cmd->add_option("--max-iters", unmix_cfg.max_iters);
  unmix_cmd->add_option("--out", unmix_out)->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train both networks");
  std::string train_config;
  std::vector<std::string> train_overrides;
  int progress = 100;
  train_cmd->add_option("--config", train_config)->required();
  train_cmd->add_option("--set", train_overrides, "key=value overriding the config file");
  train_cmd->add_option("--progress", progress, "Report every N steps (0: quiet)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Score a decomposition against its source image");
  std::string eval_original, eval_dir;
  bool eval_table = false;
  eval_cmd->add_option("original", eval_original)->required();
  eval_cmd->add_option("layers", eval_dir)->required();
  eval_cmd->add_flag("--table", eval_table, "Human-readable table instead of JSON");

  // recolor
  auto* recolor_cmd = app.add_subcommand("recolor", "Replace one layer's palette color and composite");
  std::string rec_dir, rec_color, rec_out;
  int rec_layer = 0;
  recolor_cmd->add_option("layers", rec_dir)->required();
  recolor_cmd->add_option("--layer", rec_layer)->required();
  recolor_cmd->add_option("--color", rec_color, "#RRGGBB")->required();
  recolor_cmd->add_option("--out", rec_out)->required();

  // frames
  auto* frames_cmd = app.add_subcommand("frames", "Decompose every frame in a directory with one palette");
  std::string frames_dir, frames_palette, frames_weights, frames_out;
  frames_cmd->add_option("dir", frames_dir)->required();
  frames_cmd->add_option("--palette", frames_palette)->required();
  frames_cmd->add_option("--weights", frames_weights)->envname("SOFTSEG_WEIGHTS")->required();
  frames_cmd->add_option("--out", frames_out)->required();

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "Decompose timing across image sizes");
  std::vector<int> bench_sizes{256, 512, 1024};
  std::string bench_weights;
  int bench_repeats = 3, bench_k = 7;
  bool bench_json = false;
  bench_cmd->add_option("--sizes", bench_sizes)->delimiter(',');
  bench_cmd->add_option("--weights", bench_weights, "Weights (default: random init, timing is weight-agnostic)")
      ->envname("SOFTSEG_WEIGHTS");
  bench_cmd->add_option("--k", bench_k, "Palette size when no weights are given");
  bench_cmd->add_option("--repeats", bench_repeats);
  bench_cmd->add_flag("--json", bench_json);

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "HTTP service");
  std::string serve_weights, serve_host = "127.0.0.1";
  int serve_port = 8080;
  ServiceOptions serve_opts;
  serve_cmd->add_option("--weights", serve_weights)->envname("SOFTSEG_WEIGHTS")->required();
  serve_cmd->add_option("--port", serve_port)->envname("SOFTSEG_PORT");
  serve_cmd->add_option("--host", serve_host);
  serve_cmd->add_option("--pixel-budget", serve_opts.pixel_budget);
  serve_cmd->add_option("--cache", serve_opts.cache_capacity, "Decompositions kept for recolor requests");
  serve_cmd->add_option("--static", serve_opts.static_dir, "Directory served at /");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (threads > 0) set_num_threads(threads);
    retain_heap_memory();

    if (*palette_cmd) {
      const Palette p = extract_palette(load_image(palette_image), palette_k, palette_seed);
      if (palette_out.empty()) {
        out << format_palette(p);
      } else {
        save_palette_file(p, palette_out);
      }
    } else if (*decompose_cmd) {
      const Image image = load_image(dec_image);
      const Palette palette = load_palette_file(dec_palette);
      const ModelWeights weights = load_weights(dec_weights);
      require_k(palette, weights);
      for (const std::string& m : dec_masks) dec_opts.masks.push_back(parse_mask_arg(m));
      const LayerStack stack = decompose(image, palette, weights, dec_opts);
      ExportOptions ex;
      ex.sixteen_bit = sixteen;
      ex.options_json = options_to_json(dec_opts);
      ex.weights_hash = weights_hash(weights);
      out << save_layers(stack, dec_out, ex) << '\n';
    } else if (*unmix_cmd) {
      unmix_cfg.validate();
      const Image image = load_image(unmix_image_path);
      const Palette palette = load_palette_file(unmix_palette);
      const UnmixImageResult r = unmix_image(image, models_from_palette(palette, unmix_variance), unmix_cfg);
      if (r.non_converged > 0) err << "warning: " << r.non_converged << " pixels did not converge\n";
      nlohmann::json opts{{"method", "unmix"},
                          {"sigma", unmix_cfg.sparsity_weight},
                          {"variance", unmix_variance},
                          {"constraint_weight", unmix_cfg.color_constraint_weight}};
      ExportOptions ex;
      ex.options_json = opts.dump();
      out << save_layers(r.layers, unmix_out, ex) << '\n';
    } else if (*train_cmd) {
      TrainConfig cfg = TrainConfig::load(train_config);
      for (const std::string& kv : train_overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) fail(ErrorCode::kParse, "--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
      }
      const TrainResult r = train(cfg, [&](const TrainLogRow& row) {
        if (progress > 0 && (row.step % progress == 0 || row.step + 1 == cfg.steps)) {
          err << format_log_row(row) << '\n';
        }
        return true;
      });
      nlohmann::json summary{{"steps", r.log.size()}, {"halted", r.halted}, {"weights_hash", weights_hash(r.weights)}};
      if (!r.log.empty()) {
        summary["initial_loss"] = r.log.front().loss.total;
        summary["final_loss"] = r.log.back().loss.total;
      }
      if (r.halted) summary["halt_reason"] = r.halt_reason;
      out << summary.dump() << '\n';
      if (r.halted) return kExitFailure;
    } else if (*eval_cmd) {
      const Image original = load_image(eval_original);
      const LayerStack stack = load_layers(eval_dir);
      const EvalReport report = summarize({evaluate_layers(original, stack, fs::path(eval_original).filename().string())});
      out << (eval_table ? report.to_table() : report.to_json()) << '\n';
    } else if (*recolor_cmd) {
      const LayerStack stack = load_layers(rec_dir);
      if (rec_layer < 0 || rec_layer >= stack.k()) {
        fail(ErrorCode::kInvalidArgument, "--layer must be in [0," + std::to_string(stack.k() - 1) + "]");
      }
      save_image(recolor(stack, rec_layer, parse_hex_color(rec_color)), rec_out);
    } else if (*frames_cmd) {
      const Palette palette = load_palette_file(frames_palette);
      const ModelWeights weights = load_weights(frames_weights);
      require_k(palette, weights);
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(frames_dir)) {
        if (e.is_regular_file()) files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      ExportOptions ex;
      ex.options_json = options_to_json({});
      ex.weights_hash = weights_hash(weights);
      int written = 0;
      for (const fs::path& f : files) {
        Image frame;
        try {
          frame = load_image(f.string());
        } catch (const Error& e) {
          err << "warning: skipping " << f.string() << ": " << e.what() << '\n';
          continue;
        }
        save_layers(decompose(frame, palette, weights), (fs::path(frames_out) / f.stem()).string(), ex);
        ++written;
      }
      if (written == 0) fail(ErrorCode::kInvalidArgument, "no readable frames in " + frames_dir);
      out << written << " frames\n";
    } else if (*bench_cmd) {
      const ModelWeights weights = bench_weights.empty() ? ModelWeights::create(bench_k, 1) : load_weights(bench_weights);
      const auto rows = run_bench(weights, bench_sizes, bench_repeats);
      nlohmann::json j = nlohmann::json::array();
      char line[128];
      if (!bench_json) out << "size      pixels   median_ms   ratio\n";
      for (std::size_t i = 0; i < rows.size(); ++i) {
        const double ratio = i == 0 ? 0.0 : rows[i].seconds / rows[i - 1].seconds;
        j.push_back({{"size", rows[i].size}, {"seconds", rows[i].seconds}, {"ratio", ratio}});
        std::snprintf(line, sizeof line, "%-8d %8lld %11.1f %7s\n", rows[i].size,
                      static_cast<long long>(rows[i].size) * rows[i].size, rows[i].seconds * 1e3,
                      i == 0 ? "-" : std::to_string(ratio).substr(0, 5).c_str());
        if (!bench_json) out << line;
      }
      if (bench_json) out << j.dump(2) << '\n';
    } else if (*serve_cmd) {
      Service service(load_weights(serve_weights), serve_opts);
      err << "serving on http://" << serve_host << ':' << serve_port << '\n';
      service.listen(serve_host, serve_port);
    }
  } catch (const Error& e) {
    err << nlohmann::json{{"error", {{"code", to_string(e.code())}, {"message", e.what()}}}}.dump() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << nlohmann::json{{"error", {{"code", "internal"}, {"message", e.what()}}}}.dump() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace softseg::app
