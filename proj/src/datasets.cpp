// SPDX-License-Identifier: Apache-2.0

#include "synthaug/datasets.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/core.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace synthaug::datasets {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::real:
      return "real";
    case Provenance::synthetic:
      return "synthetic";
    case Provenance::adversarial:
      return "adversarial";
  }
  return "real";
}

Provenance parse_provenance(std::string_view s) {
  if (s == "real") return Provenance::real;
  if (s == "synthetic") return Provenance::synthetic;
  if (s == "adversarial") return Provenance::adversarial;
  throw InputError(fmt::format("unknown provenance '{}'", s));
}

void Dataset::validate() const {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < categories.size(); ++i) {
    const Category& c = categories[i];
    if (c.label.class_id != static_cast<int>(i)) {
      throw InputError(fmt::format("dataset '{}': category {} has class_id {}", name, i,
                                   c.label.class_id));
    }
    if (trim(c.label.label_text).empty()) {
      throw InputError(fmt::format("dataset '{}': class {} has an empty label", name, i));
    }
    if (!seen.insert(c.label.label_text).second) {
      throw InputError(fmt::format("dataset '{}': duplicate label '{}'", name, c.label.label_text));
    }
    auto check = [&](const std::vector<ImageRef>& refs, Provenance p) {
      for (const auto& r : refs) {
        if (r.provenance != p) {
          throw InputError(fmt::format("dataset '{}': {} tagged {} in the {} list", name, r.path,
                                       to_string(r.provenance), to_string(p)));
        }
      }
    };
    check(c.real_images, Provenance::real);
    check(c.synthetic_images, Provenance::synthetic);
    check(c.adversarial_images, Provenance::adversarial);
  }
}

std::size_t Dataset::total_images() const {
  std::size_t n = 0;
  for (const auto& c : categories) n += c.size();
  return n;
}

std::size_t Dataset::count(Provenance p) const {
  std::size_t n = 0;
  for (const auto& c : categories) {
    n += p == Provenance::real        ? c.real_images.size()
         : p == Provenance::synthetic ? c.synthetic_images.size()
                                      : c.adversarial_images.size();
  }
  return n;
}

std::vector<textgen::LabelSpec> Dataset::labels() const {
  std::vector<textgen::LabelSpec> out;
  for (const auto& c : categories) out.push_back(c.label);
  return out;
}

Dataset make_dataset(std::string name, std::span<const std::string> labels, ImageSpec spec,
                     std::optional<std::string> domain) {
  Dataset ds{std::move(name), std::move(domain), {}, spec};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ds.categories.push_back({{static_cast<int>(i), labels[i]}, {}, {}, {}});
  }
  ds.validate();
  return ds;
}

void AugmentationPlan::validate() const {
  if (!(ratio >= 0.0)) throw InputError(fmt::format("augmentation ratio {} must be >= 0", ratio));
}

std::size_t AugmentationPlan::synthetic_count(std::size_t real_count) const {
  return round_half_up(ratio * static_cast<double>(real_count));
}

Category augment_category(const Category& category,
                          std::span<const imagegen::SyntheticImage> synthetic) {
  Category out = category;
  for (std::size_t i = 0; i < synthetic.size(); ++i) {
    const auto& s = synthetic[i];
    if (s.class_id != category.label.class_id) {
      throw InputError(fmt::format("synthetic image {} has class_id {}, category is {}", i,
                                   s.class_id, category.label.class_id));
    }
    out.synthetic_images.push_back({s.path.string(), Provenance::synthetic, Split::train});
  }
  return out;
}

Dataset build_augmented_dataset(const Dataset& dataset, const AugmentationPlan& plan,
                                const ImageProvider& provider) {
  plan.validate();
  Dataset out = dataset;
  std::vector<std::string> deficits;
  for (auto& cat : out.categories) {
    const std::size_t want = plan.synthetic_count(cat.real_images.size());
    if (want == 0) continue;
    auto images = provider(cat, want, plan);
    if (images.size() < want) {
      deficits.push_back(fmt::format("class {} '{}': got {}, need {} (deficit {})",
                                     cat.label.class_id, cat.label.label_text, images.size(),
                                     want, want - images.size()));
      continue;
    }
    images.resize(want);
    cat = augment_category(cat, images);
  }
  if (!deficits.empty()) {
    throw InputError(fmt::format("image provider shortfall:\n  {}", fmt::join(deficits, "\n  ")));
  }
  return out;
}

namespace {

std::vector<ImageRef> sample(const std::vector<ImageRef>& refs, std::size_t k, Rng& rng) {
  std::vector<ImageRef> out;
  out.reserve(k);
  for (std::size_t i : rng.sample_without_replacement(refs.size(), k)) out.push_back(refs[i]);
  return out;
}

}  // namespace

Dataset make_long_tail(const Dataset& dataset, std::uint64_t seed) {
  Dataset out = dataset;
  const std::size_t n = out.categories.size();
  for (std::size_t idx = 0; idx < n; ++idx) {
    auto& cat = out.categories[idx];
    const std::size_t m = cat.real_images.size();
    const std::size_t i = idx + 1;
    const std::size_t keep = std::min(m, std::max<std::size_t>(1, i * m / n));
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(cat.label.class_id)));
    cat.real_images = sample(cat.real_images, keep, rng);
  }
  return out;
}

Dataset make_few_shot(const Dataset& dataset, std::size_t per_class, std::uint64_t seed) {
  if (per_class < 1) throw InputError("few-shot per_class must be >= 1");
  Dataset out = dataset;
  for (auto& cat : out.categories) {
    if (per_class > cat.real_images.size()) {
      throw InputError(fmt::format("few-shot per_class {} exceeds class {} '{}' size {}",
                                   per_class, cat.label.class_id, cat.label.label_text,
                                   cat.real_images.size()));
    }
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(cat.label.class_id)));
    cat.real_images = sample(cat.real_images, per_class, rng);
  }
  return out;
}

Dataset inject_adversarial(const Dataset& dataset,
                           const std::map<int, std::vector<std::string>>& adversarial) {
  Dataset out = dataset;
  for (const auto& [class_id, paths] : adversarial) {
    if (class_id < 0 || class_id >= static_cast<int>(out.categories.size())) {
      throw InputError(fmt::format("adversarial images for unknown class_id {}", class_id));
    }
    auto& list = out.categories[static_cast<std::size_t>(class_id)].adversarial_images;
    for (const auto& p : paths) list.push_back({p, Provenance::adversarial, Split::train});
  }
  return out;
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& dataset, double fraction,
                                          std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw InputError(fmt::format("holdout fraction {} must be in (0, 1)", fraction));
  }
  Dataset train = dataset;
  Dataset val = dataset;
  val.name = dataset.name + "-val";
  for (std::size_t idx = 0; idx < dataset.categories.size(); ++idx) {
    const auto& cat = dataset.categories[idx];
    const std::size_t m = cat.real_images.size();
    if (m < 2) {
      throw InputError(fmt::format("class {} '{}' has {} real image(s); holdout needs >= 2",
                                   cat.label.class_id, cat.label.label_text, m));
    }
    const std::size_t k = std::min(m - 1, round_half_up(fraction * static_cast<double>(m)));
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(cat.label.class_id)));
    const auto picked = rng.sample_without_replacement(m, k);
    std::vector<char> is_val(m, 0);
    for (std::size_t i : picked) is_val[i] = 1;

    auto& tcat = train.categories[idx];
    auto& vcat = val.categories[idx];
    tcat.real_images.clear();
    vcat.real_images.clear();
    vcat.synthetic_images.clear();
    vcat.adversarial_images.clear();
    for (std::size_t i = 0; i < m; ++i) {
      ImageRef r = cat.real_images[i];
      if (is_val[i]) {
        r.split = Split::val;
        vcat.real_images.push_back(std::move(r));
      } else {
        tcat.real_images.push_back(std::move(r));
      }
    }
  }
  return {std::move(train), std::move(val)};
}

TransformOp parse_transform_op(std::string_view s) {
  if (s == "hflip") return TransformOp::hflip;
  if (s == "crop_pad4") return TransformOp::crop_pad4;
  if (s == "rotate90") return TransformOp::rotate90;
  throw InputError(fmt::format("unknown transform '{}'", s));
}

Image transform_augment(const Image& image, std::span<const TransformOp> ops, std::uint64_t seed) {
  Rng rng(seed);
  Image cur = image;
  for (TransformOp op : ops) {
    const int w = cur.width();
    const int h = cur.height();
    switch (op) {
      case TransformOp::hflip: {
        Image next(w, h);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) next.at(y, w - 1 - x, c) = cur.at(y, x, c);
        cur = std::move(next);
        break;
      }
      case TransformOp::rotate90: {
        // clockwise: (y, x) -> (x, h - 1 - y)
        Image next(h, w);
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) next.at(x, h - 1 - y, c) = cur.at(y, x, c);
        cur = std::move(next);
        break;
      }
      case TransformOp::crop_pad4: {
        // Zero-pad by 4 and take a w x h window at a random offset.
        constexpr int kPad = 4;
        const int dx = static_cast<int>(rng.uniform_index(2 * kPad + 1)) - kPad;
        const int dy = static_cast<int>(rng.uniform_index(2 * kPad + 1)) - kPad;
        Image next(w, h);
        for (int y = 0; y < h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= h) continue;
          for (int x = 0; x < w; ++x) {
            const int sx = x + dx;
            if (sx < 0 || sx >= w) continue;
            for (int c = 0; c < 3; ++c) next.at(y, x, c) = cur.at(sy, sx, c);
          }
        }
        cur = std::move(next);
        break;
      }
    }
  }
  return cur;
}

Dataset canonicalize(Dataset dataset) {
  auto by_split_path = [](const ImageRef& a, const ImageRef& b) {
    return std::tie(a.split, a.path) < std::tie(b.split, b.path);
  };
  for (auto& c : dataset.categories) {
    std::sort(c.real_images.begin(), c.real_images.end(), by_split_path);
    std::sort(c.synthetic_images.begin(), c.synthetic_images.end(), by_split_path);
    std::sort(c.adversarial_images.begin(), c.adversarial_images.end(), by_split_path);
  }
  return dataset;
}

namespace {

fs::path absolute_base(const fs::path& base_dir) {
  return fs::absolute(base_dir.empty() ? fs::path(".") : base_dir).lexically_normal();
}

std::string relative_to(const std::string& path, const fs::path& base) {
  const fs::path abs = fs::absolute(path).lexically_normal();
  const fs::path rel = abs.lexically_relative(base);
  return rel.empty() ? abs.generic_string() : rel.generic_string();
}

std::string resolve_from(const std::string& stored, const fs::path& base) {
  const fs::path p(stored);
  return (p.is_absolute() ? p : base / p).lexically_normal().generic_string();
}

json domain_json(const std::optional<std::string>& d) { return d ? json(*d) : json(nullptr); }

}  // namespace

std::string serialize_manifest(const Dataset& dataset, const fs::path& base_dir) {
  const fs::path base = absolute_base(base_dir);
  json labels = json::array();
  for (const auto& c : dataset.categories) labels.push_back(c.label.label_text);
  const json header = {{"name", dataset.name},
                       {"domain", domain_json(dataset.domain)},
                       {"image_spec",
                        {{"width", dataset.image_spec.width},
                         {"height", dataset.image_spec.height},
                         {"channels", dataset.image_spec.channels}}},
                       {"labels", labels}};

  struct Row {
    Split split;
    int class_id;
    Provenance provenance;
    std::string path;
    const std::string* label;
  };
  std::vector<Row> rows;
  for (const auto& c : dataset.categories) {
    for (const auto* list : {&c.real_images, &c.synthetic_images, &c.adversarial_images}) {
      for (const auto& r : *list) {
        rows.push_back({r.split, c.label.class_id, r.provenance, relative_to(r.path, base),
                        &c.label.label_text});
      }
    }
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.split, a.class_id, a.provenance, a.path) <
           std::tie(b.split, b.class_id, b.provenance, b.path);
  });

  std::string out = header.dump() + "\n";
  for (const auto& r : rows) {
    const json rec = {{"path", r.path},
                      {"class_id", r.class_id},
                      {"label_text", *r.label},
                      {"provenance", to_string(r.provenance)},
                      {"split", to_string(r.split)},
                      {"domain", domain_json(dataset.domain)}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

Dataset parse_manifest(std::string_view text, const fs::path& base_dir) {
  const fs::path base = absolute_base(base_dir);
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  Dataset ds;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      if (!have_header) {
        ds.name = j.at("name").get<std::string>();
        if (!j.at("domain").is_null()) ds.domain = j.at("domain").get<std::string>();
        const auto& spec = j.at("image_spec");
        ds.image_spec = {spec.at("width").get<int>(), spec.at("height").get<int>(),
                         spec.at("channels").get<int>()};
        const auto labels = j.at("labels").get<std::vector<std::string>>();
        for (std::size_t i = 0; i < labels.size(); ++i) {
          ds.categories.push_back({{static_cast<int>(i), labels[i]}, {}, {}, {}});
        }
        have_header = true;
        continue;
      }
      const int class_id = j.at("class_id").get<int>();
      if (class_id < 0 || class_id >= static_cast<int>(ds.categories.size())) {
        throw InputError(fmt::format("class_id {} outside the label list", class_id));
      }
      auto& cat = ds.categories[static_cast<std::size_t>(class_id)];
      if (j.at("label_text").get<std::string>() != cat.label.label_text) {
        throw InputError(fmt::format("label_text '{}' disagrees with header label '{}'",
                                     j.at("label_text").get<std::string>(), cat.label.label_text));
      }
      ImageRef ref{resolve_from(j.at("path").get<std::string>(), base),
                   parse_provenance(j.at("provenance").get<std::string>()),
                   parse_split(j.at("split").get<std::string>())};
      auto& list = ref.provenance == Provenance::real        ? cat.real_images
                   : ref.provenance == Provenance::synthetic ? cat.synthetic_images
                                                             : cat.adversarial_images;
      list.push_back(std::move(ref));
    } catch (const json::exception& e) {
      throw InputError(fmt::format("manifest line {}: {}", line_no, e.what()));
    } catch (const InputError& e) {
      throw InputError(fmt::format("manifest line {}: {}", line_no, e.what()));
    }
  }
  if (!have_header) throw InputError("manifest is empty (missing header line)");
  ds.validate();
  return ds;
}

void save_manifest(const Dataset& dataset, const fs::path& file) {
  write_file_atomic(file, serialize_manifest(dataset, file.parent_path()));
}

Dataset load_manifest(const fs::path& file, bool check_paths) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError(fmt::format("cannot open manifest '{}'", file.string()));
  const std::string text{std::istreambuf_iterator<char>(in), {}};
  Dataset ds = parse_manifest(text, file.parent_path());
  if (check_paths) {
    std::vector<std::string> missing;
    for (const auto& c : ds.categories) {
      for (const auto* list : {&c.real_images, &c.synthetic_images, &c.adversarial_images}) {
        for (const auto& r : *list) {
          if (!fs::exists(r.path)) missing.push_back(r.path);
        }
      }
    }
    if (!missing.empty()) {
      throw InputError(fmt::format("manifest '{}' references {} missing image(s):\n  {}",
                                   file.string(), missing.size(), fmt::join(missing, "\n  ")));
    }
  }
  return ds;
}

std::string manifest_digest(const Dataset& dataset) {
  return sha256_hex(serialize_manifest(dataset, "/"));
}

DatasetStats stats(const Dataset& dataset) {
  DatasetStats s;
  s.classes = dataset.categories.size();
  s.real = dataset.count(Provenance::real);
  s.synthetic = dataset.count(Provenance::synthetic);
  s.adversarial = dataset.count(Provenance::adversarial);
  s.total = s.real + s.synthetic + s.adversarial;
  if (!dataset.categories.empty()) {
    s.per_class_min = SIZE_MAX;
    for (const auto& c : dataset.categories) {
      s.per_class_min = std::min(s.per_class_min, c.size());
      s.per_class_max = std::max(s.per_class_max, c.size());
    }
  }
  return s;
}

std::string stats_csv_header() { return "# total,# class,# per class,real,synthetic,adversarial"; }

std::string stats_csv_row(const DatasetStats& s) {
  const std::string per_class = s.per_class_min == s.per_class_max
                                    ? std::to_string(s.per_class_min)
                                    : fmt::format("{}-{}", s.per_class_min, s.per_class_max);
  return fmt::format("{},{},{},{},{},{}", s.total, s.classes, per_class, s.real, s.synthetic,
                     s.adversarial);
}

Image load_image(const ImageRef& ref, const ImageSpec& spec) {
  Image img = read_image(ref.path);
  if (img.spec() == spec) return img;
  if (img.width() < spec.width || img.height() < spec.height) {
    throw InputError(fmt::format("image '{}' is {}x{}, smaller than dataset spec {}", ref.path,
                                 img.width(), img.height(), spec.to_string()));
  }
  return imagegen::resize(img, spec);
}

}  // namespace synthaug::datasets
