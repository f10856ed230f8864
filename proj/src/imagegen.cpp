// SPDX-License-Identifier: Apache-2.0

#include "synthaug/imagegen.hpp"

#include <signal.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include <fmt/core.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace synthaug::imagegen {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(PromptSource s) {
  return s == PromptSource::label ? "label" : "description";
}

PromptSource parse_prompt_source(std::string_view s) {
  if (s == "label") return PromptSource::label;
  if (s == "description") return PromptSource::description;
  throw InputError(fmt::format("unknown prompt source '{}' (expected label or description)", s));
}

namespace {

std::uint64_t prompt_hash(std::string_view prompt) {
  const std::string hex = sha256_hex(prompt);
  return std::stoull(hex.substr(0, 16), nullptr, 16);
}

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

// h in degrees, s and v in [0, 1]; returns RGB in [0, 1].
std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = std::fmod(h, 360.0);
  if (h < 0) h += 360.0;
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) {
    r = c, g = x;
  } else if (hp < 2) {
    r = x, g = c;
  } else if (hp < 3) {
    g = c, b = x;
  } else if (hp < 4) {
    g = x, b = c;
  } else if (hp < 5) {
    r = x, b = c;
  } else {
    r = c, b = x;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

}  // namespace

int stub_hue_bin(std::string_view prompt) {
  return static_cast<int>(prompt_hash(prompt) % StubT2IBackend::kHueBins);
}

Image stub_generate(std::string_view prompt, std::uint64_t seed) {
  constexpr int kBins = StubT2IBackend::kHueBins;
  const std::uint64_t h = prompt_hash(prompt);
  const double bin_width = 360.0 / kBins;
  const double centre = (static_cast<double>(h % kBins) + 0.5) * bin_width;

  Rng rng(mix_seed(h, seed));
  const double hue = centre + (2.0 * rng.uniform01() - 1.0) * StubT2IBackend::kHueJitterDeg;
  const double sat = 0.45 + 0.30 * rng.uniform01();
  const double val = 0.30 + 0.45 * rng.uniform01();
  const double amp = 0.25 * rng.uniform01();
  const double fx = 0.05 + 0.15 * rng.uniform01();
  const double fy = 0.05 + 0.15 * rng.uniform01();
  const double px = 2.0 * M_PI * rng.uniform01();
  const double py = 2.0 * M_PI * rng.uniform01();
  const auto chroma = hsv_to_rgb(hue, sat, 1.0);

  Image img(kBaseSize, kBaseSize);
  for (int y = 0; y < kBaseSize; ++y) {
    for (int x = 0; x < kBaseSize; ++x) {
      const double shade = val * (1.0 + amp * std::sin(fx * x + px) * std::cos(fy * y + py));
      for (int c = 0; c < 3; ++c) {
        img.at(y, x, c) = clamp_byte(255.0 * shade * chroma[c] + 4.0 * rng.normal());
      }
    }
  }
  return img;
}

double mean_hue_deg(const Image& image) {
  const Eigen::Vector3d m = normalize<double>(image).rowwise().mean();
  const double mx = m.maxCoeff();
  const double mn = m.minCoeff();
  const double d = mx - mn;
  if (d <= 0.0) return 0.0;
  double h;
  if (mx == m[0]) {
    h = 60.0 * std::fmod((m[1] - m[2]) / d, 6.0);
  } else if (mx == m[1]) {
    h = 60.0 * ((m[2] - m[0]) / d + 2.0);
  } else {
    h = 60.0 * ((m[0] - m[1]) / d + 4.0);
  }
  if (h < 0) h += 360.0;
  return h;
}

Image bilinear_resample(const Image& source, int width, int height) {
  if (width == source.width() && height == source.height()) return source;
  Image out(width, height);
  const double sx = static_cast<double>(source.width()) / width;
  const double sy = static_cast<double>(source.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, source.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, source.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, source.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, source.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = source.at(y0, x0, c) * (1 - wx) + source.at(y0, x1, c) * wx;
        const double bot = source.at(y1, x0, c) * (1 - wx) + source.at(y1, x1, c) * wx;
        out.at(y, x, c) = clamp_byte(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

Image resize(const Image& source, const ImageSpec& target) {
  target.validate();
  if (target.width > source.width() || target.height > source.height()) {
    throw InputError(fmt::format("cannot resize {}x{} up to {}x{}", source.width(),
                                 source.height(), target.width, target.height));
  }
  return bilinear_resample(source, target.width, target.height);
}

Image StubT2IBackend::generate_base(const std::string& prompt, std::uint64_t seed) {
  return stub_generate(prompt, seed);
}

Image StubT2IBackend::upsample(const Image& base, const std::string& prompt, std::uint64_t seed) {
  Image up = bilinear_resample(base, kUpsampleSize, kUpsampleSize);
  Rng rng(mix_seed(prompt_hash(prompt) ^ 0x5bd1e995ULL, seed));
  for (auto& b : up.bytes()) {
    const int delta = static_cast<int>(rng.uniform_index(5)) - 2;
    b = static_cast<std::uint8_t>(std::clamp(static_cast<int>(b) + delta, 0, 255));
  }
  return up;
}

void StubT2IBackend::finetune(std::span<const fs::path> images) {
  ++finetune_calls_;
  spdlog::info("{}: fine-tune hook called with {} image(s); stub ignores it", id(), images.size());
}

ProcessT2IBackend::ProcessT2IBackend(std::string command)
    : process_(std::make_unique<LineProcess>(std::move(command))) {
  const auto info = process_->call({{"stage", "info"}});
  id_ = info.value("backend_id", std::string("process-t2i"));
}

Image ProcessT2IBackend::request(json req, int width, int height) {
  req["width"] = width;
  req["height"] = height;
  const auto r = process_->call(req);
  try {
    const int w = r.at("width").get<int>();
    const int h = r.at("height").get<int>();
    if (w != width || h != height) {
      throw BackendError(fmt::format("backend '{}' returned {}x{}, expected {}x{}", id_, w, h,
                                     width, height));
    }
    return Image(w, h, base64_decode(r.at("pixels").get<std::string>()));
  } catch (const json::exception& e) {
    throw BackendError(fmt::format("backend '{}': malformed image response: {}", id_, e.what()));
  } catch (const InputError& e) {
    throw BackendError(fmt::format("backend '{}': {}", id_, e.what()));
  }
}

Image ProcessT2IBackend::generate_base(const std::string& prompt, std::uint64_t seed) {
  return request({{"stage", "base"}, {"prompt", prompt}, {"seed", seed}}, kBaseSize, kBaseSize);
}

Image ProcessT2IBackend::upsample(const Image& base, const std::string& prompt,
                                  std::uint64_t seed) {
  json img = {{"width", base.width()}, {"height", base.height()},
              {"pixels", base64_encode(base.bytes())}};
  return request({{"stage", "upsample"}, {"prompt", prompt}, {"seed", seed}, {"image", img}},
                 kUpsampleSize, kUpsampleSize);
}

void ProcessT2IBackend::finetune(std::span<const fs::path> images) {
  json paths = json::array();
  for (const auto& p : images) paths.push_back(p.string());
  process_->call({{"stage", "finetune"}, {"images", paths}});
}

std::unique_ptr<T2IBackend> make_t2i_backend(const std::string& spec) {
  if (spec == "stub") return std::make_unique<StubT2IBackend>();
  if (spec.starts_with("process:")) return std::make_unique<ProcessT2IBackend>(spec.substr(8));
  throw InputError(fmt::format("unknown t2i backend '{}' (expected stub or process:<cmd>)", spec));
}

void GenerationRequest::validate() const {
  if (count < 1) throw InputError("generation count G must be >= 1");
  if (trim(prompt).empty()) throw InputError("generation prompt is empty");
  target.validate();
}

namespace {

std::string safe_dir_name(std::string_view id) {
  std::string out(id);
  for (char& c : out) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  return out;
}

}  // namespace

ImageCache::ImageCache(fs::path root) : root_(std::move(root)) { fs::create_directories(root_); }

std::string ImageCache::key(std::string_view backend_id, std::string_view prompt,
                            std::uint64_t seed, const ImageSpec& spec) {
  return sha256_hex(fmt::format("{}\n{}\n{}\n{}", backend_id, prompt, seed, spec.to_string()));
}

fs::path ImageCache::image_path(std::string_view backend_id, std::string_view key) const {
  return root_ / safe_dir_name(backend_id) / (std::string(key) + ".ppm");
}

fs::path ImageCache::meta_path(std::string_view backend_id, std::string_view key) const {
  return root_ / safe_dir_name(backend_id) / (std::string(key) + ".meta");
}

std::optional<CacheEntry> ImageCache::lookup(std::string_view backend_id, std::string_view prompt,
                                             std::uint64_t seed, const ImageSpec& spec,
                                             bool* corrupt) const {
  if (corrupt) *corrupt = false;
  const std::string k = key(backend_id, prompt, seed, spec);
  const fs::path img = image_path(backend_id, k);
  const fs::path meta = meta_path(backend_id, k);
  std::error_code ec;
  if (!fs::exists(img, ec) || !fs::exists(meta, ec)) return std::nullopt;
  try {
    const auto bytes = read_file_bytes(img);
    std::ifstream in(meta);
    const json m = json::parse(in);
    const std::string checksum = sha256_hex(std::span<const std::uint8_t>(bytes));
    if (m.at("checksum").get<std::string>() != checksum) {
      throw std::runtime_error("checksum mismatch");
    }
    Image image = decode_ppm(bytes);
    if (image.spec() != spec) throw std::runtime_error("dimension mismatch");
    return CacheEntry{std::move(image), img, checksum};
  } catch (const std::exception& e) {
    spdlog::warn("cache entry {} is corrupt ({}); regenerating", img.string(), e.what());
    if (corrupt) *corrupt = true;
    return std::nullopt;
  }
}

CacheEntry ImageCache::store(std::string_view backend_id, std::string_view prompt,
                             std::uint64_t seed, const ImageSpec& spec, const Image& image) {
  const std::string k = key(backend_id, prompt, seed, spec);
  const auto bytes = encode_ppm(image);
  const std::string checksum = sha256_hex(std::span<const std::uint8_t>(bytes));
  const fs::path img = image_path(backend_id, k);
  write_file_atomic(img, bytes);
  const json meta = {{"backend_id", backend_id},
                     {"prompt", prompt},
                     {"seed", seed},
                     {"spec", {{"width", spec.width}, {"height", spec.height},
                               {"channels", spec.channels}}},
                     {"checksum", checksum}};
  // Raster first, sidecar second: an entry without its sidecar is a miss.
  write_file_atomic(meta_path(backend_id, k), meta.dump(2) + "\n");
  return {image, img, checksum};
}

std::size_t ImageCache::sweep_stale_temporaries() const {
  std::size_t removed = 0;
  std::error_code ec;
  for (auto it = fs::recursive_directory_iterator(root_, ec);
       it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) break;
    if (!it->is_regular_file()) continue;
    const std::string name = it->path().filename().string();
    const auto pos = name.find(".tmp.");
    if (pos == std::string::npos) continue;
    const auto rest = name.substr(pos + 5);
    const auto dot = rest.find('.');
    long pid = 0;
    try {
      pid = std::stol(rest.substr(0, dot));
    } catch (const std::exception&) {
      continue;
    }
    if (::kill(static_cast<pid_t>(pid), 0) != 0 && errno == ESRCH) {
      fs::remove(it->path(), ec);
      if (!ec) ++removed;
    }
  }
  return removed;
}

std::vector<SyntheticImage> gen_images(T2IBackend& backend, const GenerationRequest& req,
                                       ImageCache& cache, GenerationStats* stats) {
  req.validate();
  const std::string backend_id = backend.id();
  const std::size_t total = req.count;
  std::vector<SyntheticImage> out(total);
  std::vector<char> done(total, 0);
  std::exception_ptr failure;
  std::size_t failed_index = 0;
  std::mutex mu;
  GenerationStats local;

  auto produce = [&](std::size_t k) {
    const int index = static_cast<int>(k) + 1;
    const std::uint64_t seed = req.seed + static_cast<std::uint64_t>(index);
    SyntheticImage& s = out[k];
    s.prompt = req.prompt;
    s.prompt_source = req.prompt_source;
    s.class_id = req.label.class_id;
    s.index = index;
    s.backend_id = backend_id;
    s.seed = seed;
    bool corrupt = false;
    if (auto hit = cache.lookup(backend_id, req.prompt, seed, req.target, &corrupt)) {
      s.pixels = std::move(hit->image);
      s.path = std::move(hit->path);
      s.checksum = std::move(hit->checksum);
      s.from_cache = true;
      std::lock_guard lock(mu);
      ++local.cache_hits;
      return;
    }
    const Image base = backend.generate_base(req.prompt, seed);
    if (base.width() != kBaseSize || base.height() != kBaseSize) {
      throw BackendError(fmt::format("base stage returned {}x{}", base.width(), base.height()));
    }
    const Image up = backend.upsample(base, req.prompt, seed);
    if (up.width() != kUpsampleSize || up.height() != kUpsampleSize) {
      throw BackendError(fmt::format("upsample stage returned {}x{}", up.width(), up.height()));
    }
    auto entry = cache.store(backend_id, req.prompt, seed, req.target, resize(up, req.target));
    s.pixels = std::move(entry.image);
    s.path = std::move(entry.path);
    s.checksum = std::move(entry.checksum);
    std::lock_guard lock(mu);
    ++local.generated;
    if (corrupt) ++local.regenerated_corrupt;
  };

  std::atomic<std::size_t> next{0};
  std::atomic<bool> stop{false};
  auto worker = [&] {
    for (std::size_t k; !stop && (k = next.fetch_add(1)) < total;) {
      try {
        produce(k);
        done[k] = 1;
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure || k < failed_index) {
          failure = std::current_exception();
          failed_index = k;
        }
        stop = true;
      }
    }
  };

  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min({backend.max_parallelism(), hw, total});
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  if (stats) {
    stats->generated += local.generated;
    stats->cache_hits += local.cache_hits;
    stats->regenerated_corrupt += local.regenerated_corrupt;
  }
  if (failure) {
    std::vector<int> completed;
    for (std::size_t k = 0; k < total; ++k) {
      if (done[k]) completed.push_back(static_cast<int>(k) + 1);
    }
    std::string reason;
    try {
      std::rethrow_exception(failure);
    } catch (const std::exception& e) {
      reason = e.what();
    }
    throw GenerationFailure(
        fmt::format("class {} '{}': image {} of {} failed ({}); {} completed", req.label.class_id,
                    req.label.label_text, failed_index + 1, total, reason, completed.size()),
        std::move(completed));
  }
  return out;
}

}  // namespace synthaug::imagegen
