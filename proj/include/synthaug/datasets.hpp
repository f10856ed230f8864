// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "synthaug/common.hpp"
#include "synthaug/image.hpp"
#include "synthaug/imagegen.hpp"
#include "synthaug/textgen.hpp"

namespace synthaug::datasets {

/// Enum order is the canonical manifest order.
enum class Provenance { real, synthetic, adversarial };

std::string_view to_string(Provenance p);
Provenance parse_provenance(std::string_view s);

struct ImageRef {
  std::string path;
  Provenance provenance = Provenance::real;
  Split split = Split::train;

  bool operator==(const ImageRef&) const = default;
};

struct Category {
  textgen::LabelSpec label;
  std::vector<ImageRef> real_images;
  std::vector<ImageRef> synthetic_images;
  std::vector<ImageRef> adversarial_images;

  std::size_t size() const {
    return real_images.size() + synthetic_images.size() + adversarial_images.size();
  }
  bool operator==(const Category&) const = default;
};

struct Dataset {
  std::string name;
  std::optional<std::string> domain;
  std::vector<Category> categories;
  ImageSpec image_spec{32, 32, 3};

  /// class ids 0..n-1 in order, labels unique, provenance tags consistent.
  void validate() const;
  std::size_t total_images() const;
  std::size_t count(Provenance p) const;
  std::vector<textgen::LabelSpec> labels() const;

  bool operator==(const Dataset&) const = default;
};

/// Builds n empty categories from label texts.
Dataset make_dataset(std::string name, std::span<const std::string> labels, ImageSpec spec,
                     std::optional<std::string> domain = std::nullopt);

/// Synthetic images per category = round_half_up(ratio * real count).
struct AugmentationPlan {
  double ratio = 1.0;
  imagegen::PromptSource prompt_source = imagegen::PromptSource::label;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t synthetic_count(std::size_t real_count) const;
};

/// Appends synthetic images to a category; real images are untouched.
Category augment_category(const Category& category,
                          std::span<const imagegen::SyntheticImage> synthetic);

/// Supplies `count` synthetic images for a category under a plan.
using ImageProvider = std::function<std::vector<imagegen::SyntheticImage>(
    const Category& category, std::size_t count, const AugmentationPlan& plan)>;

Dataset build_augmented_dataset(const Dataset& dataset, const AugmentationPlan& plan,
                                const ImageProvider& provider);

/// Category i (1-based) keeps max(1, floor(i * m_i / n)) of its real images,
/// sampled uniformly without replacement.
Dataset make_long_tail(const Dataset& dataset, std::uint64_t seed);

/// Keeps exactly `per_class` real images in every category.
Dataset make_few_shot(const Dataset& dataset, std::size_t per_class, std::uint64_t seed);

Dataset inject_adversarial(const Dataset& dataset,
                           const std::map<int, std::vector<std::string>>& adversarial);

/// Moves round_half_up(fraction * m) real images of every category to a
/// validation set. Synthetic and adversarial images always stay in train.
std::pair<Dataset, Dataset> split_holdout(const Dataset& dataset, double fraction,
                                          std::uint64_t seed);

enum class TransformOp { hflip, crop_pad4, rotate90 };

TransformOp parse_transform_op(std::string_view s);

/// Classic augmentation baseline; crop offsets are drawn from `seed`.
Image transform_augment(const Image& image, std::span<const TransformOp> ops,
                        std::uint64_t seed = 0);

/// Sorts every image list by (split, path), the manifest order within a class.
Dataset canonicalize(Dataset dataset);

/// Header line {"name","domain","image_spec","labels"} followed by one record
/// per image {path, class_id, label_text, provenance, split, domain} in
/// (split, class_id, provenance, path) order. Paths are written relative to
/// `base_dir`.
std::string serialize_manifest(const Dataset& dataset, const std::filesystem::path& base_dir);
Dataset parse_manifest(std::string_view text, const std::filesystem::path& base_dir);

void save_manifest(const Dataset& dataset, const std::filesystem::path& file);

/// With `check_paths`, every missing image is listed in one InputError.
Dataset load_manifest(const std::filesystem::path& file, bool check_paths = true);

/// sha256 of the manifest rendered relative to "/".
std::string manifest_digest(const Dataset& dataset);

struct DatasetStats {
  std::size_t total = 0;
  std::size_t classes = 0;
  std::size_t per_class_min = 0;
  std::size_t per_class_max = 0;
  std::size_t real = 0;
  std::size_t synthetic = 0;
  std::size_t adversarial = 0;
};

DatasetStats stats(const Dataset& dataset);

/// "# total,# class,# per class,real,synthetic,adversarial" row.
std::string stats_csv_header();
std::string stats_csv_row(const DatasetStats& s);

/// Reads a ref's pixels, scaling down to the dataset spec if needed.
Image load_image(const ImageRef& ref, const ImageSpec& spec);

}  // namespace synthaug::datasets
