#include "service.hpp"

#include <httplib.h>
#include <json.hpp>

#include <list>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "common.hpp"
#include "softseg/error.hpp"
#include "softseg/layer_ops.hpp"
#include "softseg/metrics.hpp"
#include "softseg/palette.hpp"
#include "softseg/storage.hpp"

namespace softseg::app {
namespace {

using nlohmann::json;

// A request error with its HTTP status.
struct HttpError {
  int status;
  std::string message;
};

[[noreturn]] void reject(int status, const std::string& message) { throw HttpError{status, message}; }

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kPaletteMismatch: return 422;
    case ErrorCode::kNumeric: return 500;
    default: return 400;
  }
}

Response json_response(const json& j, int status = 200) { return Response{status, j.dump(), "application/json"}; }

Response error_response(int status, const std::string& message) {
  return json_response({{"error", message}, {"status", status}}, status);
}

template <typename Fn>
Response guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const HttpError& e) {
    return error_response(e.status, e.message);
  } catch (const Error& e) {
    return error_response(status_for(e.code()), e.what());
  } catch (const json::exception& e) {
    return error_response(400, std::string("malformed JSON: ") + e.what());
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

json parse_body(const std::string& body) {
  json j = json::parse(body, nullptr, false);
  if (j.is_discarded()) reject(400, "body is not valid JSON");
  if (!j.is_object()) reject(400, "body must be a JSON object");
  return j;
}

const json& field(const json& j, const char* name) {
  if (!j.contains(name)) reject(400, std::string("field '") + name + "': required");
  return j.at(name);
}

std::string string_field(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_string()) reject(400, std::string("field '") + name + "': must be a string");
  return v.get<std::string>();
}

int int_field(const json& j, const char* name) {
  const json& v = field(j, name);
  if (!v.is_number_integer()) reject(400, std::string("field '") + name + "': must be an integer");
  return v.get<int>();
}

// Width and height from a PNG header, when the bytes are a PNG.
bool png_dimensions(const std::vector<std::uint8_t>& b, std::uint64_t& w, std::uint64_t& h) {
  static const std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (b.size() < 24 || !std::equal(sig, sig + 8, b.begin())) return false;
  auto be32 = [&](std::size_t at) {
    return (std::uint64_t{b[at]} << 24) | (std::uint64_t{b[at + 1]} << 16) | (std::uint64_t{b[at + 2]} << 8) | b[at + 3];
  };
  w = be32(16);
  h = be32(20);
  return true;
}

std::vector<std::uint8_t> decode_base64_field(const std::string& text, const char* name) {
  std::string_view payload = text;
  if (payload.rfind("data:", 0) == 0) {
    const auto comma = payload.find(',');
    if (comma == std::string_view::npos) reject(400, std::string("field '") + name + "': malformed data URL");
    payload.remove_prefix(comma + 1);
  }
  try {
    return base64_decode(payload);
  } catch (const Error& e) {
    reject(400, std::string("field '") + name + "': " + e.what());
  }
}

Palette palette_from_json(const json& v, const char* name) {
  Palette p;
  try {
    if (v.is_string()) {
      p = parse_palette(v.get<std::string>());
    } else if (v.is_array()) {
      for (const json& c : v) {
        if (c.is_string()) {
          p.colors.push_back(parse_hex_color(c.get<std::string>()));
        } else if (c.is_array() && c.size() == 3) {
          p.colors.push_back({c[0].get<float>(), c[1].get<float>(), c[2].get<float>()});
        } else {
          reject(400, std::string("field '") + name + "': colors must be \"#rrggbb\" or [r,g,b]");
        }
      }
    } else if (v.is_object() && v.contains("colors")) {
      return palette_from_json(v.at("colors"), name);
    } else {
      reject(400, std::string("field '") + name + "': must be an array of colors");
    }
    p.validate();
  } catch (const Error& e) {
    reject(400, std::string("field '") + name + "': " + e.what());
  } catch (const json::exception& e) {
    reject(400, std::string("field '") + name + "': " + e.what());
  }
  return p;
}

json palette_to_json(const Palette& p) {
  json out = json::array();
  for (const Rgb& c : p.colors) out.push_back(to_hex(c));
  return out;
}

struct CacheEntry {
  LayerStack stack;
  std::vector<std::string> layers_b64;
  json manifest;
};

}  // namespace

struct Service::Impl {
  ModelWeights weights;
  ServiceOptions options;
  std::string hash;

  std::mutex cache_mutex;
  std::list<std::string> lru;  // most recent first
  std::unordered_map<std::string, std::pair<std::shared_ptr<const CacheEntry>, std::list<std::string>::iterator>> cache;

  httplib::Server server;
  std::thread thread;

  Image decode_checked(const std::vector<std::uint8_t>& bytes, const char* name) const {
    std::uint64_t w = 0, h = 0;
    if (png_dimensions(bytes, w, h) && w * h > options.pixel_budget) {
      reject(413, std::string("field '") + name + "': " + std::to_string(w) + "x" + std::to_string(h) +
                      " exceeds the pixel budget of " + std::to_string(options.pixel_budget));
    }
    Image img;
    try {
      img = decode_image(bytes, name);
    } catch (const Error& e) {
      reject(400, std::string("field '") + name + "': " + e.what());
    }
    if (img.pixels() > options.pixel_budget) {
      reject(413, std::string("field '") + name + "': image exceeds the pixel budget of " +
                      std::to_string(options.pixel_budget));
    }
    return img;
  }

  Image image_field(const json& j, const char* name) const {
    return decode_checked(decode_base64_field(string_field(j, name), name), name);
  }

  std::shared_ptr<const CacheEntry> lookup(const std::string& key) {
    std::lock_guard lock(cache_mutex);
    auto it = cache.find(key);
    if (it == cache.end()) return nullptr;
    lru.splice(lru.begin(), lru, it->second.second);
    return it->second.first;
  }

  void insert(const std::string& key, std::shared_ptr<const CacheEntry> entry) {
    if (options.cache_capacity == 0) return;
    std::lock_guard lock(cache_mutex);
    if (auto it = cache.find(key); it != cache.end()) {
      lru.erase(it->second.second);
      cache.erase(it);
    }
    lru.push_front(key);
    cache[key] = {std::move(entry), lru.begin()};
    while (cache.size() > options.cache_capacity) {
      cache.erase(lru.back());
      lru.pop_back();
    }
  }

  DecomposeOptions options_from_json(const json& j, const Image& image) const {
    DecomposeOptions opt;
    if (j.is_null()) return opt;
    if (!j.is_object()) reject(400, "field 'options': must be an object");
    try {
      opt.guided_filter = j.value("guided_filter", false);
      opt.filter_radius = j.value("filter_radius", opt.filter_radius);
      opt.filter_eps = j.value("filter_eps", opt.filter_eps);
    } catch (const json::exception& e) {
      reject(400, std::string("field 'options': ") + e.what());
    }
    if (opt.filter_radius < 1) reject(400, "field 'options.filter_radius': must be at least 1");
    if (!(opt.filter_eps > 0.0)) reject(400, "field 'options.filter_eps': must be positive");
    if (j.contains("masks")) {
      const json& masks = j.at("masks");
      if (!masks.is_array()) reject(400, "field 'options.masks': must be an array");
      for (const json& m : masks) {
        if (!m.is_object()) reject(400, "field 'options.masks': entries must be objects");
        LayerMask lm;
        lm.layer = int_field(m, "layer");
        try {
          lm.mode = parse_mask_mode(m.value("mode", std::string("multiply")));
        } catch (const Error& e) {
          reject(400, std::string("field 'options.masks.mode': ") + e.what());
        }
        const Image mask = image_field(m, "mask");
        if (mask.height != image.height || mask.width != image.width) {
          reject(400, "field 'options.masks.mask': size differs from the image");
        }
        lm.mask = mask_from_image(mask);
        opt.masks.push_back(std::move(lm));
      }
    }
    return opt;
  }

  Response run_decompose(const std::vector<std::uint8_t>& image_bytes, const Palette& palette, const json& options_json) {
    if (palette.size() != weights.k) {
      reject(422, "palette has " + std::to_string(palette.size()) + " colors but the weights were trained for K=" +
                      std::to_string(weights.k));
    }
    const Image image = decode_checked(image_bytes, "image");
    const DecomposeOptions opt = options_from_json(options_json, image);
    for (const LayerMask& m : opt.masks) {
      if (m.layer < 0 || m.layer >= palette.size()) reject(400, "field 'options.masks.layer': out of range");
    }

    std::string key_material(image_bytes.begin(), image_bytes.end());
    key_material += format_palette(palette);
    key_material += options_json.dump();
    const std::string key = sha256_hex(
        std::span(reinterpret_cast<const std::uint8_t*>(key_material.data()), key_material.size()));

    auto entry = lookup(key);
    if (!entry) {
      auto fresh = std::make_shared<CacheEntry>();
      fresh->stack = softseg::decompose(image, palette, weights, opt);
      for (const auto& png : encode_layers(fresh->stack)) fresh->layers_b64.push_back(base64_encode(png));
      LayerManifest m;
      m.palette = palette;
      m.k = palette.size();
      m.width = image.width;
      m.height = image.height;
      m.options_json = options_to_json(opt);
      m.weights_hash = hash;
      for (int i = 0; i < m.k; ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "layer_%02d.png", i);
        m.layer_files.push_back(name);
      }
      fresh->manifest = json::parse(m.to_json());
      entry = fresh;
      insert(key, fresh);
    }
    return json_response({{"id", key},
                          {"layers", entry->layers_b64},
                          {"manifest", entry->manifest},
                          {"composite", base64_encode(encode_png(compose(entry->stack)))}});
  }

  // The stack named by "layers_id", or inline "layers" + "palette".
  std::shared_ptr<const CacheEntry> stack_from(const json& j) {
    if (j.contains("layers_id")) {
      const std::string id = string_field(j, "layers_id");
      auto entry = lookup(id);
      if (!entry) reject(404, "field 'layers_id': unknown or evicted decomposition " + id);
      return entry;
    }
    const json& layers = field(j, "layers");
    if (!layers.is_array() || layers.empty()) reject(400, "field 'layers': must be a non-empty array");
    const Palette palette = palette_from_json(field(j, "palette"), "palette");
    std::vector<std::vector<std::uint8_t>> pngs;
    for (const json& l : layers) {
      if (!l.is_string()) reject(400, "field 'layers': entries must be base64 strings");
      pngs.push_back(decode_base64_field(l.get<std::string>(), "layers"));
      std::uint64_t w = 0, h = 0;
      if (png_dimensions(pngs.back(), w, h) && w * h > options.pixel_budget) {
        reject(413, "field 'layers': layer exceeds the pixel budget");
      }
    }
    auto entry = std::make_shared<CacheEntry>();
    try {
      entry->stack = decode_layers(pngs, palette);
    } catch (const Error& e) {
      reject(e.code() == ErrorCode::kPaletteMismatch ? 422 : 400, std::string("field 'layers': ") + e.what());
    }
    return entry;
  }
};

Service::Service(ModelWeights weights, ServiceOptions options) : impl_(std::make_unique<Impl>()) {
  impl_->weights = std::move(weights);
  impl_->options = options;
  impl_->hash = softseg::weights_hash(impl_->weights);

  auto& srv = impl_->server;
  srv.set_payload_max_length(options.max_body_bytes);
  auto reply = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body, r.content_type);
  };
  srv.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  srv.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
  srv.Get("/api/health", [this, reply](const httplib::Request&, httplib::Response& res) { reply(res, health()); });
  srv.Post("/api/palette",
           [this, reply](const httplib::Request& req, httplib::Response& res) { reply(res, palette(req.body)); });
  srv.Post("/api/decompose", [this, reply](const httplib::Request& req, httplib::Response& res) {
    if (req.is_multipart_form_data()) {
      auto value = [&](const char* key) { return req.has_file(key) ? req.get_file_value(key).content : std::string(); };
      reply(res, decompose_multipart(value("image"), value("palette"), value("options")));
    } else {
      reply(res, decompose(req.body));
    }
  });
  srv.Post("/api/recolor",
           [this, reply](const httplib::Request& req, httplib::Response& res) { reply(res, recolor(req.body)); });
  srv.Post("/api/metrics",
           [this, reply](const httplib::Request& req, httplib::Response& res) { reply(res, metrics(req.body)); });
  srv.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      const int status = res.status;
      res.set_content(json({{"error", httplib::status_message(status)}, {"status", status}}).dump(),
                      "application/json");
    }
  });
  if (!options.static_dir.empty() && !srv.set_mount_point("/", options.static_dir)) {
    fail(ErrorCode::kIo, "static directory not found: " + options.static_dir);
  }
}

Service::~Service() { stop(); }

const std::string& Service::weights_hash() const { return impl_->hash; }

Response Service::health() const {
  return json_response({{"status", "ok"}, {"k", impl_->weights.k}, {"weights_hash", impl_->hash}});
}

Response Service::palette(const std::string& body) const {
  return guarded([&] {
    const json j = parse_body(body);
    const Image image = impl_->image_field(j, "image");
    const int k = int_field(j, "k");
    if (k < 1 || k > Palette::kMaxColors) reject(400, "field 'k': must be in [1,16]");
    std::uint64_t seed = 0;
    if (j.contains("seed")) {
      if (!j.at("seed").is_number_unsigned()) reject(400, "field 'seed': must be a nonnegative integer");
      seed = j.at("seed").get<std::uint64_t>();
    }
    const Palette p = extract_palette(image, k, seed);
    json values = json::array();
    for (const Rgb& c : p.colors) values.push_back({c[0], c[1], c[2]});
    return json_response({{"colors", palette_to_json(p)}, {"values", values}, {"has_duplicates", p.has_duplicates}});
  });
}

Response Service::decompose(const std::string& body) {
  return guarded([&] {
    const json j = parse_body(body);
    const auto bytes = decode_base64_field(string_field(j, "image"), "image");
    const Palette p = palette_from_json(field(j, "palette"), "palette");
    return impl_->run_decompose(bytes, p, j.contains("options") ? j.at("options") : json());
  });
}

Response Service::decompose_multipart(const std::string& image, const std::string& palette,
                                      const std::string& options) {
  return guarded([&] {
    if (image.empty()) reject(400, "field 'image': required");
    if (palette.empty()) reject(400, "field 'palette': required");
    json pal = json::parse(palette, nullptr, false);
    if (pal.is_discarded()) pal = palette;  // plain palette text
    json opt;
    if (!options.empty()) {
      opt = json::parse(options, nullptr, false);
      if (opt.is_discarded()) reject(400, "field 'options': not valid JSON");
    }
    const std::vector<std::uint8_t> bytes(image.begin(), image.end());
    return impl_->run_decompose(bytes, palette_from_json(pal, "palette"), opt);
  });
}

Response Service::recolor(const std::string& body) {
  return guarded([&] {
    const json j = parse_body(body);
    const auto entry = impl_->stack_from(j);
    const int layer = int_field(j, "layer_index");
    if (layer < 0 || layer >= entry->stack.k()) reject(400, "field 'layer_index': out of range");
    Rgb color;
    try {
      color = parse_hex_color(string_field(j, "color"));
    } catch (const Error& e) {
      reject(400, std::string("field 'color': ") + e.what());
    }
    const Image out = softseg::recolor(entry->stack, layer, color);
    return json_response({{"composite", base64_encode(encode_png(out))}});
  });
}

Response Service::metrics(const std::string& body) {
  return guarded([&] {
    const json j = parse_body(body);
    const Image original = impl_->image_field(j, "original");
    const auto entry = impl_->stack_from(j);
    if (entry->stack.height() != original.height || entry->stack.width() != original.width) {
      reject(400, "field 'layers': size differs from the original");
    }
    const EvalReport report = summarize({evaluate_layers(original, entry->stack, j.value("name", "image"))});
    return Response{200, report.to_json(), "application/json"};
  });
}

int Service::start(const std::string& host, int port) {
  auto& srv = impl_->server;
  const int bound = port == 0 ? srv.bind_to_any_port(host) : (srv.bind_to_port(host, port) ? port : -1);
  if (bound < 0) fail(ErrorCode::kIo, "cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([&srv] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  return bound;
}

void Service::listen(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) fail(ErrorCode::kIo, "cannot listen on " + host + ":" + std::to_string(port));
}

void Service::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace softseg::app
