// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "synthaug/common.hpp"
#include "synthaug/image.hpp"
#include "synthaug/process.hpp"
#include "synthaug/textgen.hpp"

namespace synthaug::imagegen {

/// Resolution of the base sampler and of the upsampler output.
inline constexpr int kBaseSize = 64;
inline constexpr int kUpsampleSize = 256;

enum class PromptSource { label, description };

std::string_view to_string(PromptSource s);
PromptSource parse_prompt_source(std::string_view s);

struct SyntheticImage {
  Image pixels;
  std::string prompt;
  PromptSource prompt_source = PromptSource::label;
  int class_id = 0;
  int index = 1;  // 1-based position within its request
  std::string backend_id;
  std::uint64_t seed = 0;  // per-image seed actually used
  std::filesystem::path path;  // cache location, empty if uncached
  std::string checksum;        // sha256 of the encoded raster
  bool from_cache = false;
};

/// Two-stage text-to-image generator: a 64x64 base sample, then a 256x256
/// upsample conditioned on the same prompt.
class T2IBackend {
 public:
  virtual ~T2IBackend() = default;

  virtual std::string id() const = 0;
  virtual Image generate_base(const std::string& prompt, std::uint64_t seed) = 0;
  virtual Image upsample(const Image& base, const std::string& prompt, std::uint64_t seed) = 0;

  /// Adapts the generator to a training set. Optional.
  virtual void finetune(std::span<const std::filesystem::path> images) { (void)images; }

  virtual std::size_t max_parallelism() const { return 1; }
};

/// Procedural stand-in. Every image from a prompt is a shaded, noisy field
/// whose hue comes from hash(prompt), quantized to kHueBins bins, with a
/// small per-image jitter; the upsampler is bilinear plus fine noise.
class StubT2IBackend final : public T2IBackend {
 public:
  static constexpr int kHueBins = 12;
  static constexpr double kHueJitterDeg = 6.0;
  /// Mean-hue distance guaranteed between prompts that fall in different
  /// bins: 360/kHueBins - 2*kHueJitterDeg.
  static constexpr double kMinHueDistanceDeg = 360.0 / kHueBins - 2 * kHueJitterDeg;
  /// Mean-hue distance guaranteed between images of prompts in different hue
  /// bins, measured after noise, upsampling and resizing. Leaves 3 degrees
  /// of the generated margin for pixel noise and rounding.
  static constexpr double kMeasuredHueSeparationDeg = kMinHueDistanceDeg - 3.0;

  std::string id() const override { return "stub-t2i-v1"; }
  Image generate_base(const std::string& prompt, std::uint64_t seed) override;
  Image upsample(const Image& base, const std::string& prompt, std::uint64_t seed) override;
  void finetune(std::span<const std::filesystem::path> images) override;
  std::size_t max_parallelism() const override { return 64; }

  std::size_t finetune_calls() const { return finetune_calls_; }

 private:
  std::size_t finetune_calls_ = 0;
};

/// Out-of-process generator. Requests {"stage":"base"|"upsample","prompt",
/// "seed","width","height"[,"image"]} answered by {"width","height",
/// "channels","pixels"} with base64 raw RGB bytes.
class ProcessT2IBackend final : public T2IBackend {
 public:
  explicit ProcessT2IBackend(std::string command);

  std::string id() const override { return id_; }
  Image generate_base(const std::string& prompt, std::uint64_t seed) override;
  Image upsample(const Image& base, const std::string& prompt, std::uint64_t seed) override;
  void finetune(std::span<const std::filesystem::path> images) override;

 private:
  Image request(nlohmann::json req, int width, int height);

  std::unique_ptr<LineProcess> process_;
  std::string id_;
};

/// "stub" or "process:<command>".
std::unique_ptr<T2IBackend> make_t2i_backend(const std::string& spec);

/// The stub's base sampler as a free function of (prompt, seed).
Image stub_generate(std::string_view prompt, std::uint64_t seed);

/// Hue bin the stub assigns to a prompt.
int stub_hue_bin(std::string_view prompt);

/// Mean hue of an image in degrees, [0, 360).
double mean_hue_deg(const Image& image);

/// Bilinear sampling with half-pixel centres and edge clamping; any size.
Image bilinear_resample(const Image& source, int width, int height);

/// Downscales a generated image to the dataset resolution. Upscaling throws.
Image resize(const Image& source, const ImageSpec& target);

template <typename Scalar>
struct Standardization {
  std::array<Scalar, 3> mean{0, 0, 0};
  std::array<Scalar, 3> stddev{1, 1, 1};

  static Standardization uniform(Scalar m, Scalar s) { return {{m, m, m}, {s, s, s}}; }
};

/// Channels x pixels matrix of pixel/255, optionally standardized per channel.
/// Column p is pixel p in row-major order.
template <typename Scalar = float>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> normalize(
    const Image& image, const std::optional<Standardization<Scalar>>& standardization = {}) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const auto bytes = image.bytes();
  const Eigen::Map<const Eigen::Matrix<std::uint8_t, 3, Eigen::Dynamic>> raw(
      bytes.data(), 3, static_cast<Eigen::Index>(bytes.size() / 3));
  Mat out = raw.template cast<Scalar>() / Scalar(255);
  if (standardization) {
    for (int c = 0; c < 3; ++c) {
      out.row(c).array() =
          (out.row(c).array() - standardization->mean[c]) / standardization->stddev[c];
    }
  }
  return out;
}

struct GenerationRequest {
  textgen::LabelSpec label;
  std::string prompt;
  PromptSource prompt_source = PromptSource::label;
  std::size_t count = 1;  // G
  ImageSpec target{32, 32, 3};
  std::uint64_t seed = 0;

  void validate() const;
};

struct CacheEntry {
  Image image;
  std::filesystem::path path;
  std::string checksum;
};

/// Content-addressed store: <root>/<backend_id>/<key>.ppm plus a <key>.meta
/// JSON sidecar holding prompt, seed, spec and checksum. Writes are atomic.
class ImageCache {
 public:
  explicit ImageCache(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }

  static std::string key(std::string_view backend_id, std::string_view prompt,
                         std::uint64_t seed, const ImageSpec& spec);

  std::filesystem::path image_path(std::string_view backend_id, std::string_view key) const;
  std::filesystem::path meta_path(std::string_view backend_id, std::string_view key) const;

  /// Hit only if both files exist and the raster matches the stored checksum.
  /// A mismatch is logged and reported as `corrupt`.
  std::optional<CacheEntry> lookup(std::string_view backend_id, std::string_view prompt,
                                   std::uint64_t seed, const ImageSpec& spec,
                                   bool* corrupt = nullptr) const;

  CacheEntry store(std::string_view backend_id, std::string_view prompt, std::uint64_t seed,
                   const ImageSpec& spec, const Image& image);

  /// Removes temporaries left by writers that are no longer running.
  std::size_t sweep_stale_temporaries() const;

 private:
  std::filesystem::path root_;
};

struct GenerationStats {
  std::size_t generated = 0;
  std::size_t cache_hits = 0;
  std::size_t regenerated_corrupt = 0;
};

/// Raised when the backend fails part-way; `completed` lists the 1-based
/// indices that were produced (and cached) before the failure.
class GenerationFailure : public PartialFailure {
 public:
  GenerationFailure(const std::string& what, std::vector<int> completed)
      : PartialFailure(what), completed(std::move(completed)) {}
  std::vector<int> completed;
};

/// Produces exactly req.count images. Image j (1-based) uses seed req.seed + j
/// and goes base -> upsample -> resize(target). Cached images are returned
/// without touching the backend.
std::vector<SyntheticImage> gen_images(T2IBackend& backend, const GenerationRequest& req,
                                       ImageCache& cache, GenerationStats* stats = nullptr);

}  // namespace synthaug::imagegen
