// SPDX-License-Identifier: Apache-2.0

#include "synthaug/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "synthaug/corpus.hpp"
#include "synthaug/image.hpp"
#include "synthaug/imagegen.hpp"

namespace synthaug::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Seed salts for streams that must not overlap with synthetic generation.
constexpr std::uint64_t kAdversarialSalt = 0xad7e25a1a1ULL;
constexpr std::uint64_t kToySalt = 0x70795eedULL;

std::string adversarial_prompt(const std::string& label) {
  return "a " + label + " in an unusual style";
}

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void require_file(const std::string& path, std::string_view what) {
  if (path.empty()) throw InputError(fmt::format("{} is required", what));
  if (!fs::is_regular_file(path)) throw InputError(fmt::format("{} not found: {}", what, path));
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("cannot read {}", path.string()));
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(fmt::format("{}: {}", path.string(), e.what()));
  }
}

fs::path prepare_out(const PipelineConfig& config) {
  const fs::path out(config.out_dir);
  fs::create_directories(out);
  write_file_atomic(out / "effective_config.toml", config.to_toml());
  write_json(out / "config.json", config.to_json());
  return out;
}

void finish(ExperimentResult& result, const fs::path& out, const Stopwatch& clock,
            const char* file = "result.json") {
  result.timings_sec["total"] = clock.seconds();
  write_json(out / file, result.to_json());
  json t = json::object();
  for (const auto& [k, v] : result.timings_sec) t[k] = v;
  write_json(out / "timings.json", t);
  result.outputs.push_back(out / file);
}

std::vector<textgen::LabelSpec> label_specs(const std::vector<std::string>& labels) {
  std::vector<textgen::LabelSpec> out;
  for (std::size_t i = 0; i < labels.size(); ++i) out.push_back({static_cast<int>(i), labels[i]});
  return out;
}

using DescriptionTable = std::map<std::string, std::vector<std::string>>;

DescriptionTable read_descriptions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("cannot read descriptions {}", path.string()));
  std::map<std::string, std::map<std::size_t, std::string>> by_label;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      by_label[j.at("label").get<std::string>()][j.at("variant").get<std::size_t>()] =
          j.at("text").get<std::string>();
    } catch (const json::exception& e) {
      throw InputError(fmt::format("{} line {}: {}", path.string(), n, e.what()));
    }
  }
  DescriptionTable out;
  for (auto& [label, variants] : by_label) {
    for (auto& [v, text] : variants) out[label].push_back(std::move(text));
  }
  return out;
}

/// Requests that together produce `count` images for a category. Label
/// prompts use one request; description prompts are dealt round-robin over
/// the label's variants.
std::vector<imagegen::GenerationRequest> plan_requests(const datasets::Category& cat,
                                                       std::size_t count,
                                                       const PipelineConfig& config,
                                                       const DescriptionTable* descriptions) {
  std::vector<imagegen::GenerationRequest> out;
  if (count == 0) return out;
  const std::uint64_t class_seed =
      mix_seed(config.seed, static_cast<std::uint64_t>(cat.label.class_id));
  const auto source = imagegen::parse_prompt_source(config.prompt_source);
  if (source == imagegen::PromptSource::label) {
    out.push_back({cat.label, cat.label.label_text, source, count, config.image_spec(), class_seed});
    return out;
  }
  auto it = descriptions->find(cat.label.label_text);
  if (it == descriptions->end() || it->second.empty()) {
    throw InputError(fmt::format("descriptions file has no entry for label '{}'",
                                 cat.label.label_text));
  }
  const auto& texts = it->second;
  for (std::size_t v = 0; v < texts.size(); ++v) {
    const std::size_t share = count / texts.size() + (v < count % texts.size() ? 1 : 0);
    if (share == 0) continue;
    out.push_back({cat.label, texts[v], source, share, config.image_spec(), mix_seed(class_seed, v + 1)});
  }
  return out;
}

std::optional<DescriptionTable> maybe_descriptions(const PipelineConfig& config) {
  if (imagegen::parse_prompt_source(config.prompt_source) != imagegen::PromptSource::description) {
    return std::nullopt;
  }
  if (config.descriptions.empty() || !fs::is_regular_file(config.descriptions)) {
    throw InputError(fmt::format(
        "prompt_source=description needs a descriptions file{}; run gen-descriptions first and "
        "pass --descriptions <its out_dir>/descriptions.jsonl, or use --prompt_source label",
        config.descriptions.empty() ? "" : fmt::format(" ({} not found)", config.descriptions)));
  }
  return read_descriptions(config.descriptions);
}

std::string ratio_setting(double ratio) {
  return fmt::format("+{}%", static_cast<long long>(std::llround(ratio * 100.0)));
}

std::string csv_number(double v) { return fmt::format("{:.6f}", v); }

}  // namespace

// ---------------------------------------------------------------- config

void PipelineConfig::validate(std::string_view command) const {
  corpus::parse_caption_format(caption_format);
  imagegen::parse_prompt_source(prompt_source);
  if (!std::isfinite(ratio) || ratio < 0) throw InputError(fmt::format("ratio {} must be >= 0", ratio));
  if (variants_per_label < 1) throw InputError("variants_per_label must be >= 1");
  if (finetune_epochs < 1) throw InputError("finetune_epochs must be >= 1");
  decode_config().validate();
  image_spec().validate();
  train.validate();
  if (classifier != "convnet" && classifier != "softmax") {
    throw InputError(fmt::format("unknown classifier '{}' (convnet, softmax)", classifier));
  }
  if (long_tail && few_shot > 0) throw InputError("long_tail and few_shot are mutually exclusive");
  for (double r : ratios) {
    if (!std::isfinite(r) || r <= 0) throw InputError(fmt::format("sweep ratio {} must be > 0", r));
  }
  for (double r : max_ratios) {
    if (!std::isfinite(r) || r <= 0) throw InputError(fmt::format("max ratio {} must be > 0", r));
  }
  static const std::set<std::string> kMetrics = {"accuracy", "bleu4", "rouge_l", "cider_d"};
  if (!kMetrics.contains(metric)) throw InputError(fmt::format("unknown metric '{}'", metric));
  if (out_dir.empty()) throw InputError("out_dir must not be empty");

  if (command == "finetune-t2t") {
    require_file(captions, "caption file");
  } else if (command == "gen-images" || command == "build-dataset") {
    require_file(dataset, "dataset manifest");
  } else if (command == "train") {
    require_file(dataset, "dataset manifest");
    require_file(test_dataset, "test manifest");
  } else if (command == "evaluate") {
    if (!hypotheses.empty() || !references.empty()) {
      require_file(hypotheses, "hypotheses file");
      require_file(references, "references file");
    } else {
      require_file(checkpoint, "checkpoint");
      require_file(test_dataset, "test manifest");
    }
  } else if (command == "sweep") {
    require_file(dataset, "dataset manifest");
    require_file(test_dataset, "test manifest");
    if (ratios.empty() && max_ratios.empty()) throw InputError("sweep needs ratios or max_ratios");
  } else if (command == "report") {
    if (results.empty()) throw InputError("report needs at least one result file");
  } else if (command == "make-toy") {
    if (labels.empty() && labels_file.empty()) throw InputError("make-toy needs labels");
    if (toy_per_class < 1 || toy_test_per_class < 1) {
      throw InputError("toy_per_class and toy_test_per_class must be >= 1");
    }
  }
}

json PipelineConfig::to_json() const {
  json j = {{"captions", captions},
            {"caption_format", caption_format},
            {"labels", labels},
            {"labels_file", labels_file},
            {"dataset", dataset},
            {"test_dataset", test_dataset},
            {"descriptions", descriptions},
            {"images_manifest", images_manifest},
            {"adversarial_dir", adversarial_dir},
            {"t2t_backend", t2t_backend},
            {"t2i_backend", t2i_backend},
            {"ratio", ratio},
            {"prompt_source", prompt_source},
            {"seed", seed},
            {"variants_per_label", variants_per_label},
            {"long_tail", long_tail},
            {"few_shot", few_shot},
            {"adversarial_per_class", adversarial_per_class},
            {"manifest_only", manifest_only},
            {"max_length", max_length},
            {"beam_size", beam_size},
            {"finetune_epochs", finetune_epochs},
            {"width", width},
            {"height", height},
            {"classifier", classifier},
            {"checkpoint", checkpoint},
            {"hypotheses", hypotheses},
            {"references", references},
            {"ratios", ratios},
            {"max_ratios", max_ratios},
            {"results", results},
            {"metric", metric},
            {"toy_per_class", toy_per_class},
            {"toy_test_per_class", toy_test_per_class},
            {"name", name},
            {"out_dir", out_dir},
            {"cache_dir", cache_dir}};
  const json tc = train.to_json();
  for (const auto& [k, v] : tc.items()) {
    if (k != "loss") j[k] = v;
  }
  return j;
}

std::string PipelineConfig::to_toml() const {
  std::string out = "# effective configuration\n";
  const json j = to_json();
  for (const auto& [k, v] : j.items()) {
    // JSON scalars and flat arrays are valid TOML values. Empty lists stay
    // commented out: the option parser would read "[]" as one blank item.
    out += fmt::format("{}{} = {}\n", v.is_array() && v.empty() ? "# " : "", k, v.dump());
  }
  return out;
}

std::string PipelineConfig::digest() const { return sha256_hex(to_json().dump()); }

fs::path PipelineConfig::resolved_cache_dir() const {
  if (!cache_dir.empty()) return cache_dir;
  if (const char* env = std::getenv(kCacheEnv); env != nullptr && *env != '\0') return env;
  return fs::path(out_dir) / "cache";
}

textgen::DecodeConfig PipelineConfig::decode_config() const {
  return {max_length, beam_size, seed};
}

ImageSpec PipelineConfig::image_spec() const { return {width, height, 3}; }

datasets::AugmentationPlan PipelineConfig::plan() const {
  return {ratio, imagegen::parse_prompt_source(prompt_source), seed};
}

// ---------------------------------------------------------------- result

json ExperimentResult::to_json() const {
  json j = {{"command", command},
            {"name", name},
            {"config_digest", config_digest},
            {"manifest_digests", manifest_digests},
            {"dataset", dataset},
            {"metric", metric},
            {"value", value}};
  if (run_report) j["run_report"] = run_report->to_json();
  if (metric_report) j["metric_report"] = metric_report->to_json();
  return j;
}

ExperimentResult ExperimentResult::from_json(const json& j) {
  ExperimentResult r;
  try {
    r.command = j.at("command").get<std::string>();
    r.name = j.value("name", "");
    r.config_digest = j.value("config_digest", "");
    r.manifest_digests = j.value("manifest_digests", std::map<std::string, std::string>{});
    r.dataset = j.value("dataset", "");
    r.metric = j.value("metric", "");
    r.value = j.value("value", 0.0);
    if (j.contains("run_report")) r.run_report = trainer::RunReport::from_json(j["run_report"]);
    if (j.contains("metric_report")) {
      r.metric_report = metrics::MetricReport::from_json(j["metric_report"]);
    }
  } catch (const json::exception& e) {
    throw InputError(fmt::format("malformed result: {}", e.what()));
  }
  return r;
}

// ---------------------------------------------------------------- inputs

std::vector<std::string> resolve_labels(const PipelineConfig& config) {
  if (!config.labels.empty()) return config.labels;
  if (!config.labels_file.empty()) {
    std::ifstream in(config.labels_file);
    if (!in) throw InputError(fmt::format("labels file not found: {}", config.labels_file));
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
      auto t = trim(line);
      if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
  }
  if (!config.dataset.empty()) {
    std::vector<std::string> out;
    for (const auto& l : datasets::load_manifest(config.dataset, false).labels()) {
      out.push_back(l.label_text);
    }
    return out;
  }
  return {};
}

datasets::Dataset load_real_dataset(const PipelineConfig& config) {
  require_file(config.dataset, "dataset manifest");
  datasets::Dataset ds = datasets::load_manifest(config.dataset, !config.manifest_only);
  if (ds.count(datasets::Provenance::synthetic) + ds.count(datasets::Provenance::adversarial) > 0) {
    throw InputError(fmt::format("{} is not a real-image manifest", config.dataset));
  }
  if (config.long_tail) ds = datasets::make_long_tail(ds, config.seed);
  if (config.few_shot > 0) ds = datasets::make_few_shot(ds, config.few_shot, config.seed);
  return ds;
}

// ---------------------------------------------------------------- commands

ExperimentResult cmd_finetune_t2t(const PipelineConfig& config) {
  config.validate("finetune-t2t");
  Stopwatch clock;
  const fs::path out = prepare_out(config);
  const auto loaded = corpus::load_captions(config.captions,
                                            corpus::parse_caption_format(config.caption_format));
  const auto records = corpus::build_finetune_records(loaded.captions, corpus::RuleBasedTagger{});
  if (records.empty()) {
    throw InputError(fmt::format("{}: no train-split caption yields a keyword", config.captions));
  }
  std::ostringstream rec;
  corpus::write_finetune_records(rec, records);
  write_file_atomic(out / "records.jsonl", rec.str());

  auto backend = textgen::make_t2t_backend(config.t2t_backend);
  const auto summary = textgen::finetune(*backend, records, config.finetune_epochs);
  const json s = {{"backend_id", summary.backend_id},
                  {"records", records.size()},
                  {"records_digest", sha256_hex(rec.str())},
                  {"skipped_blank", loaded.skipped_blank},
                  {"records_seen", summary.records_seen},
                  {"epochs", summary.epochs},
                  {"nll_per_epoch", summary.nll_per_epoch}};
  write_json(out / "finetune_summary.json", s);
  spdlog::info("fine-tuned {} on {} records for {} epochs ({} seen)", summary.backend_id,
               records.size(), summary.epochs, summary.records_seen);

  ExperimentResult r;
  r.command = "finetune-t2t";
  r.name = config.name;
  r.config_digest = config.digest();
  r.metric = "final_nll";
  r.value = summary.final_nll();
  r.outputs = {out / "records.jsonl", out / "finetune_summary.json"};
  finish(r, out, clock);
  return r;
}

ExperimentResult cmd_gen_descriptions(const PipelineConfig& config) {
  config.validate("gen-descriptions");
  const auto labels = resolve_labels(config);
  if (labels.empty()) {
    throw InputError("no labels given; set labels, labels_file or dataset");
  }
  Stopwatch clock;
  const fs::path out = prepare_out(config);
  auto backend = textgen::make_t2t_backend(config.t2t_backend);
  if (!config.captions.empty()) {
    // Process backends keep fine-tuned state only for the session, so tune
    // in the same session that generates.
    require_file(config.captions, "caption file");
    const auto loaded = corpus::load_captions(
        config.captions, corpus::parse_caption_format(config.caption_format));
    const auto records = corpus::build_finetune_records(loaded.captions, corpus::RuleBasedTagger{});
    textgen::finetune(*backend, records, config.finetune_epochs);
  }
  const auto specs = label_specs(labels);
  const auto descs = textgen::gen_description_batch(*backend, specs, config.decode_config(),
                                                    config.variants_per_label);
  std::string text;
  for (std::size_t i = 0; i < descs.size(); ++i) {
    const auto& d = descs[i];
    const std::size_t variant = i % config.variants_per_label;
    const json line = {{"class_id", d.source_label.class_id},
                       {"label", d.source_label.label_text},
                       {"variant", variant},
                       {"text", d.text},
                       {"backend_id", d.backend_id},
                       {"seed", d.decode_config.seed}};
    text += line.dump() + "\n";
  }
  write_file_atomic(out / "descriptions.jsonl", text);
  spdlog::info("wrote {} descriptions for {} labels", descs.size(), labels.size());

  ExperimentResult r;
  r.command = "gen-descriptions";
  r.name = config.name;
  r.config_digest = config.digest();
  r.metric = "descriptions";
  r.value = static_cast<double>(descs.size());
  r.outputs = {out / "descriptions.jsonl"};
  finish(r, out, clock);
  return r;
}

namespace {

struct GenerationOutcome {
  datasets::Dataset synthetic;
  imagegen::GenerationStats stats;
  std::vector<std::string> failures;
  json per_class = json::array();
};

/// Generates the synthetic images a config implies, class by class. Backend
/// failures inside a class are collected; other errors propagate.
GenerationOutcome generate_synthetic(const PipelineConfig& config, const datasets::Dataset& real,
                                     imagegen::T2IBackend& backend, imagegen::ImageCache& cache) {
  const auto descriptions = maybe_descriptions(config);
  const auto plan = config.plan();
  GenerationOutcome g;
  g.synthetic = real;
  g.synthetic.name = real.name + "-synthetic";
  g.synthetic.image_spec = config.image_spec();
  for (auto& cat : g.synthetic.categories) {
    cat.real_images.clear();
    cat.synthetic_images.clear();
    cat.adversarial_images.clear();
  }
  for (std::size_t c = 0; c < real.categories.size(); ++c) {
    const auto& cat = real.categories[c];
    const std::size_t want = plan.synthetic_count(cat.real_images.size());
    std::size_t got = 0;
    for (const auto& req : plan_requests(cat, want, config, descriptions ? &*descriptions : nullptr)) {
      try {
        for (const auto& img : imagegen::gen_images(backend, req, cache, &g.stats)) {
          g.synthetic.categories[c].synthetic_images.push_back(
              {img.path.string(), datasets::Provenance::synthetic, Split::train});
          ++got;
        }
      } catch (const imagegen::GenerationFailure& e) {
        got += e.completed.size();
        g.failures.push_back(fmt::format("class {} '{}': {} ({} of {} images in this request cached)",
                                         cat.label.class_id, cat.label.label_text, e.what(),
                                         e.completed.size(), req.count));
        break;
      }
    }
    g.per_class.push_back({{"class_id", cat.label.class_id},
                           {"label", cat.label.label_text},
                           {"real", cat.real_images.size()},
                           {"requested", want},
                           {"produced", got}});
    if (!g.failures.empty()) break;  // the backend is gone; later classes would fail too
  }
  return g;
}

}  // namespace

ExperimentResult cmd_gen_images(const PipelineConfig& config) {
  config.validate("gen-images");
  const auto real = load_real_dataset(config);
  maybe_descriptions(config);  // fail on a missing file before any work
  Stopwatch clock;
  const fs::path out = prepare_out(config);
  imagegen::ImageCache cache(config.resolved_cache_dir());
  const std::size_t swept = cache.sweep_stale_temporaries();
  if (swept > 0) spdlog::info("removed {} stale temporaries from the cache", swept);
  auto backend = imagegen::make_t2i_backend(config.t2i_backend);

  auto g = generate_synthetic(config, real, *backend, cache);
  const double gen_seconds = clock.seconds();

  // Out-of-distribution images, written as PNGs in <out_dir>/adversarial/<label>/.
  std::size_t adversarial = 0;
  if (config.adversarial_per_class > 0 && g.failures.empty()) {
    for (const auto& cat : real.categories) {
      imagegen::GenerationRequest req{
          cat.label, adversarial_prompt(cat.label.label_text),
          imagegen::PromptSource::label, config.adversarial_per_class, config.image_spec(),
          mix_seed(config.seed ^ kAdversarialSalt, static_cast<std::uint64_t>(cat.label.class_id))};
      try {
        for (const auto& img : imagegen::gen_images(*backend, req, cache, &g.stats)) {
          write_png(out / "adversarial" / cat.label.label_text / fmt::format("{:04}.png", img.index),
                    img.pixels);
          ++adversarial;
        }
      } catch (const imagegen::GenerationFailure& e) {
        g.failures.push_back(fmt::format("adversarial class {}: {}", cat.label.class_id, e.what()));
        break;
      }
    }
  }

  const json report = {{"backend_id", backend->id()},
                       {"cache_dir", config.resolved_cache_dir().generic_string()},
                       {"generated", g.stats.generated},
                       {"cache_hits", g.stats.cache_hits},
                       {"regenerated_corrupt", g.stats.regenerated_corrupt},
                       {"adversarial", adversarial},
                       {"classes", g.per_class},
                       {"failures", g.failures}};
  write_json(out / "gen_report.json", report);
  spdlog::info("gen-images: {} generated, {} cache hits, {} corrupt entries regenerated",
               g.stats.generated, g.stats.cache_hits, g.stats.regenerated_corrupt);
  if (!g.failures.empty()) {
    throw PartialFailure(fmt::format(
        "image generation incomplete:\n  {}\nfinished images are cached; rerun the same command "
        "to resume (report: {})",
        fmt::join(g.failures, "\n  "), (out / "gen_report.json").string()));
  }

  datasets::save_manifest(g.synthetic, out / "images.jsonl");
  ExperimentResult r;
  r.command = "gen-images";
  r.name = config.name;
  r.config_digest = config.digest();
  r.manifest_digests["images"] = datasets::manifest_digest(g.synthetic);
  r.dataset = real.name;
  r.metric = "synthetic_images";
  r.value = static_cast<double>(g.synthetic.count(datasets::Provenance::synthetic));
  r.timings_sec["generation"] = gen_seconds;
  r.outputs = {out / "images.jsonl", out / "gen_report.json"};
  finish(r, out, clock);
  return r;
}

ExperimentResult cmd_build_dataset(const PipelineConfig& config) {
  config.validate("build-dataset");
  const auto real = load_real_dataset(config);
  const auto plan = config.plan();
  Stopwatch clock;
  const fs::path out = prepare_out(config);

  datasets::ImageProvider provider;
  std::optional<datasets::Dataset> pool;
  std::unique_ptr<imagegen::T2IBackend> backend;
  std::optional<imagegen::ImageCache> cache;
  std::optional<DescriptionTable> descriptions;
  imagegen::GenerationStats stats;

  if (!config.images_manifest.empty()) {
    require_file(config.images_manifest, "images manifest");
    pool = datasets::load_manifest(config.images_manifest, !config.manifest_only);
    if (pool->labels() != real.labels()) {
      throw InputError(fmt::format("{} and {} have different label sets", config.images_manifest,
                                   config.dataset));
    }
    provider = [&](const datasets::Category& cat, std::size_t count,
                   const datasets::AugmentationPlan&) {
      const auto& have = pool->categories[static_cast<std::size_t>(cat.label.class_id)].synthetic_images;
      std::vector<imagegen::SyntheticImage> picked;
      for (std::size_t i = 0; i < std::min(count, have.size()); ++i) {
        imagegen::SyntheticImage s;
        s.class_id = cat.label.class_id;
        s.index = static_cast<int>(i) + 1;
        s.path = have[i].path;
        picked.push_back(std::move(s));
      }
      return picked;
    };
  } else if (plan.ratio > 0) {
    descriptions = maybe_descriptions(config);
    backend = imagegen::make_t2i_backend(config.t2i_backend);
    cache.emplace(config.resolved_cache_dir());
    const auto* table = descriptions ? &*descriptions : nullptr;
    if (config.manifest_only) {
      // Entries point where the cache would hold each image; nothing is rendered.
      provider = [&, table](const datasets::Category& cat, std::size_t count,
                            const datasets::AugmentationPlan&) {
        std::vector<imagegen::SyntheticImage> planned;
        const std::string id = backend->id();
        for (const auto& req : plan_requests(cat, count, config, table)) {
          for (std::size_t j = 1; j <= req.count; ++j) {
            imagegen::SyntheticImage s;
            s.class_id = cat.label.class_id;
            s.index = static_cast<int>(j);
            s.seed = req.seed + j;
            s.path = cache->image_path(id, imagegen::ImageCache::key(id, req.prompt, s.seed, req.target));
            planned.push_back(std::move(s));
          }
        }
        return planned;
      };
    } else {
      provider = [&, table](const datasets::Category& cat, std::size_t count,
                            const datasets::AugmentationPlan&) {
        std::vector<imagegen::SyntheticImage> made;
        for (const auto& req : plan_requests(cat, count, config, table)) {
          auto imgs = imagegen::gen_images(*backend, req, *cache, &stats);
          for (auto& s : imgs) {
            s.pixels = Image();
            made.push_back(std::move(s));
          }
        }
        return made;
      };
    }
  } else {
    provider = [](const datasets::Category&, std::size_t, const datasets::AugmentationPlan&) {
      return std::vector<imagegen::SyntheticImage>{};
    };
  }

  datasets::Dataset ds = datasets::build_augmented_dataset(real, plan, provider);
  ds.image_spec = config.image_spec();

  if (!config.adversarial_dir.empty()) {
    if (!fs::is_directory(config.adversarial_dir)) {
      throw InputError(fmt::format("adversarial directory not found: {}", config.adversarial_dir));
    }
    std::map<int, std::vector<std::string>> adv;
    for (const auto& cat : ds.categories) {
      const fs::path dir = fs::path(config.adversarial_dir) / cat.label.label_text;
      if (!fs::is_directory(dir)) continue;
      std::vector<std::string> files;
      for (const auto& e : fs::directory_iterator(dir)) {
        const auto ext = e.path().extension();
        if (e.is_regular_file() && (ext == ".png" || ext == ".ppm")) {
          files.push_back(fs::absolute(e.path()).lexically_normal().generic_string());
        }
      }
      std::sort(files.begin(), files.end());
      if (!files.empty()) adv[cat.label.class_id] = std::move(files);
    }
    if (adv.empty()) {
      throw InputError(fmt::format("{} has no <label>/*.png images for any class",
                                   config.adversarial_dir));
    }
    ds = datasets::inject_adversarial(ds, adv);
  }

  ds = datasets::canonicalize(std::move(ds));
  ds.validate();
  datasets::save_manifest(ds, out / "dataset.jsonl");
  write_file_atomic(out / "stats.csv",
                    datasets::stats_csv_header() + "\n" + datasets::stats_csv_row(datasets::stats(ds)) + "\n");
  const auto st = datasets::stats(ds);
  spdlog::info("dataset '{}': {} real, {} synthetic, {} adversarial", ds.name, st.real,
               st.synthetic, st.adversarial);

  ExperimentResult r;
  r.command = "build-dataset";
  r.name = config.name;
  r.config_digest = config.digest();
  r.manifest_digests["dataset"] = datasets::manifest_digest(ds);
  r.dataset = ds.name;
  r.metric = "images";
  r.value = static_cast<double>(ds.total_images());
  r.outputs = {out / "dataset.jsonl", out / "stats.csv"};
  finish(r, out, clock);
  return r;
}

ExperimentResult cmd_train(const PipelineConfig& config) {
  config.validate("train");
  const auto train_set = datasets::load_manifest(config.dataset);
  const auto test_set = datasets::load_manifest(config.test_dataset);
  if (train_set.labels() != test_set.labels()) {
    throw InputError(fmt::format("{} and {} have different label sets", config.dataset,
                                 config.test_dataset));
  }
  Stopwatch clock;
  const fs::path out = prepare_out(config);
  trainer::ExperimentOptions options;
  options.classifier = config.classifier;
  options.checkpoint_dir = out / "checkpoints";
  auto report = trainer::run_experiment(train_set, test_set, config.train, options);

  ExperimentResult r;
  r.command = "train";
  r.name = config.name;
  r.config_digest = config.digest();
  r.manifest_digests["train"] = datasets::manifest_digest(train_set);
  r.manifest_digests["test"] = datasets::manifest_digest(test_set);
  r.dataset = test_set.name;
  r.metric = "accuracy";
  r.value = report.mean_test_accuracy;
  const bool partial = report.partial;
  r.run_report = std::move(report);
  finish(r, out, clock, "report.json");
  spdlog::info("mean test accuracy {:.4f} (std {:.4f}) over {} seeds", r.run_report->mean_test_accuracy,
               r.run_report->std_test_accuracy, r.run_report->seeds.size());
  if (partial) {
    throw PartialFailure(fmt::format("some seeds failed; see {}", (out / "report.json").string()));
  }
  return r;
}

ExperimentResult cmd_evaluate(const PipelineConfig& config) {
  config.validate("evaluate");
  Stopwatch clock;
  ExperimentResult r;
  r.command = "evaluate";
  r.name = config.name;
  r.config_digest = config.digest();

  if (!config.hypotheses.empty()) {
    const auto pairs = metrics::read_caption_pairs(config.hypotheses, config.references);
    const auto rep = metrics::evaluate_captions(pairs, config.name);
    const fs::path out = prepare_out(config);
    write_file_atomic(out / "metrics.csv",
                      metrics::metric_csv_header() + "\n" + metrics::metric_csv_row(rep) + "\n");
    r.dataset = rep.dataset;
    r.metric = config.metric == "accuracy" ? "cider_d" : config.metric;
    r.value = r.metric == "bleu4" ? rep.bleu4 : r.metric == "rouge_l" ? rep.rouge_l : rep.cider_d;
    r.metric_report = rep;
    r.outputs = {out / "metrics.csv"};
    finish(r, out, clock, "metrics.json");
    spdlog::info("BLEU-4 {:.4f}  ROUGE-L {:.4f}  CIDEr-D {:.4f} over {} images", rep.bleu4,
                 rep.rouge_l, rep.cider_d, rep.n);
    return r;
  }

  auto model = trainer::load_checkpoint<float>(config.checkpoint);
  const auto test_set = datasets::load_manifest(config.test_dataset);
  if (model->num_classes() != static_cast<int>(test_set.categories.size())) {
    throw InputError(fmt::format("checkpoint {} has {} classes but {} has {}", config.checkpoint,
                                 model->num_classes(), config.test_dataset,
                                 test_set.categories.size()));
  }
  if (!(model->input_spec() == test_set.image_spec)) {
    throw InputError(fmt::format("checkpoint expects {} images, test manifest has {}",
                                 model->input_spec().to_string(),
                                 test_set.image_spec.to_string()));
  }
  const fs::path out = prepare_out(config);
  const trainer::ExperimentOptions defaults;
  const auto tensors = trainer::to_tensors<float>(test_set, defaults.loader, defaults.standardization);
  r.dataset = test_set.name;
  r.metric = "accuracy";
  r.value = trainer::evaluate(*model, tensors);
  r.manifest_digests["test"] = datasets::manifest_digest(test_set);
  finish(r, out, clock, "evaluation.json");
  spdlog::info("accuracy {:.4f} on {} images", r.value, tensors.size());
  return r;
}

std::string sweep_csv_header() {
  return "setting,ratio,mean_val_accuracy,mean_test_accuracy,std_test_accuracy,"
         "baseline_test_accuracy,delta";
}

const SweepPoint& select_max(const std::vector<SweepPoint>& points) {
  if (points.empty()) throw InputError("no sweep points to choose from");
  const SweepPoint* best = &points.front();
  for (const auto& p : points) {
    if (p.mean_val_accuracy > best->mean_val_accuracy ||
        (p.mean_val_accuracy == best->mean_val_accuracy && p.ratio < best->ratio)) {
      best = &p;
    }
  }
  return *best;
}

ExperimentResult cmd_sweep(const PipelineConfig& config) {
  config.validate("sweep");
  Stopwatch clock;
  const fs::path out = prepare_out(config);
  const fs::path cache_dir = config.resolved_cache_dir();

  auto run_point = [&](double ratio) {
    PipelineConfig sub = config;
    sub.ratio = ratio;
    sub.cache_dir = cache_dir.string();
    sub.out_dir = (out / "runs" / fmt::format("ratio_{}", ratio)).string();
    sub.images_manifest.clear();
    if (ratio > 0) {
      cmd_gen_images(sub);
      sub.images_manifest = (fs::path(sub.out_dir) / "images.jsonl").string();
    }
    cmd_build_dataset(sub);
    PipelineConfig tr = sub;
    tr.dataset = (fs::path(sub.out_dir) / "dataset.jsonl").string();
    tr.out_dir = (fs::path(sub.out_dir) / "train").string();
    const auto res = cmd_train(tr);
    return SweepPoint{ratio, res.run_report->mean_val_accuracy, res.run_report->mean_test_accuracy,
                      res.run_report->std_test_accuracy};
  };

  const SweepPoint base = run_point(0.0);
  std::map<double, SweepPoint> done;
  auto point = [&](double r) {
    auto it = done.find(r);
    if (it == done.end()) it = done.emplace(r, run_point(r)).first;
    return it->second;
  };

  std::string csv = sweep_csv_header() + "\n";
  auto row = [&](const std::string& setting, const SweepPoint& p) {
    csv += fmt::format("{},{},{},{},{},{},{}\n", setting, p.ratio, csv_number(p.mean_val_accuracy),
                       csv_number(p.mean_test_accuracy), csv_number(p.std_test_accuracy),
                       csv_number(base.mean_test_accuracy),
                       metrics::format_delta(base.mean_test_accuracy, p.mean_test_accuracy));
  };
  json points = json::array();
  PlotSeries test{"mean test accuracy", {{0.0, base.mean_test_accuracy}}, false};
  PlotSeries val{"mean val accuracy", {{0.0, base.mean_val_accuracy}}, false};
  for (double r : config.ratios) {
    const auto p = point(r);
    row(ratio_setting(r), p);
    test.points.emplace_back(r, p.mean_test_accuracy);
    val.points.emplace_back(r, p.mean_val_accuracy);
    points.push_back({{"setting", ratio_setting(r)}, {"ratio", r},
                      {"mean_test_accuracy", p.mean_test_accuracy}});
  }
  if (!config.max_ratios.empty()) {
    std::vector<SweepPoint> candidates;
    for (double r : config.max_ratios) candidates.push_back(point(r));
    const SweepPoint best = select_max(candidates);
    row("max", best);
    points.push_back({{"setting", "max"}, {"ratio", best.ratio},
                      {"mean_test_accuracy", best.mean_test_accuracy}});
  }
  write_file_atomic(out / "sweep.csv", csv);

  double x_max = 0;
  for (const auto& [x, y] : test.points) x_max = std::max(x_max, x);
  PlotSeries baseline{"baseline", {{0.0, base.mean_test_accuracy}, {x_max, base.mean_test_accuracy}}, true};
  write_png(out / "sweep.png", render_line_plot({test, val, baseline}));

  ExperimentResult r;
  r.command = "sweep";
  r.name = config.name;
  r.config_digest = config.digest();
  r.metric = "accuracy";
  r.value = base.mean_test_accuracy;
  r.outputs = {out / "sweep.csv", out / "sweep.png"};
  finish(r, out, clock);
  write_json(out / "sweep.json", {{"baseline_test_accuracy", base.mean_test_accuracy}, {"rows", points}});
  return r;
}

ExperimentResult cmd_report(const PipelineConfig& config) {
  config.validate("report");
  Stopwatch clock;
  std::vector<metrics::ScoreEntry> entries;
  for (const auto& path : config.results) {
    const auto res = ExperimentResult::from_json(read_json(path));
    metrics::ScoreEntry e{res.name.empty() ? fs::path(path).parent_path().filename().string() : res.name,
                          res.dataset, config.metric, 0.0};
    if (res.metric == config.metric) {
      e.value = res.value;
    } else if (res.metric_report && config.metric != "accuracy") {
      const auto& m = *res.metric_report;
      e.value = config.metric == "bleu4" ? m.bleu4 : config.metric == "rouge_l" ? m.rouge_l : m.cider_d;
    } else {
      throw InputError(fmt::format("{} has no '{}' score (it reports {})", path, config.metric,
                                   res.metric));
    }
    entries.push_back(std::move(e));
  }
  const auto rows = metrics::delta_table(entries.front(),
                                         std::span(entries).subspan(1));
  const fs::path out = prepare_out(config);
  std::string csv = "name,dataset,metric,value,delta\n";
  const auto& b = entries.front();
  csv += fmt::format("{},{},{},{},{}\n", b.name, b.dataset, b.metric, csv_number(b.value), "baseline");
  for (const auto& row : rows) {
    csv += fmt::format("{},{},{},{},{}\n", row.name, b.dataset, b.metric, csv_number(row.value),
                       row.rendered);
  }
  write_file_atomic(out / "report.csv", csv);
  fmt::print("{}", csv);

  ExperimentResult r;
  r.command = "report";
  r.name = config.name;
  r.config_digest = config.digest();
  r.dataset = b.dataset;
  r.metric = config.metric;
  r.value = b.value;
  r.outputs = {out / "report.csv"};
  finish(r, out, clock);
  return r;
}

ExperimentResult cmd_make_toy(const PipelineConfig& config) {
  config.validate("make-toy");
  const auto labels = resolve_labels(config);
  if (labels.empty()) throw InputError("make-toy needs labels");
  Stopwatch clock;
  const fs::path out = prepare_out(config);
  const ImageSpec spec = config.image_spec();
  auto train = datasets::make_dataset(config.name, labels, spec);
  auto test = datasets::make_dataset(config.name, labels, spec);
  imagegen::StubT2IBackend stub;
  for (std::size_t c = 0; c < labels.size(); ++c) {
    const std::uint64_t base = mix_seed(config.seed ^ kToySalt, c);
    const std::size_t total = config.toy_per_class + config.toy_test_per_class;
    for (std::size_t i = 0; i < total; ++i) {
      const std::uint64_t s = base + i;
      const Image full = stub.upsample(stub.generate_base(labels[c], s), labels[c], s);
      const bool is_train = i < config.toy_per_class;
      const fs::path file = out / (is_train ? "train" : "test") / labels[c] / fmt::format("{:04}.png", i);
      write_png(file, imagegen::resize(full, spec));
      auto& cat = (is_train ? train : test).categories[c];
      cat.real_images.push_back(
          {fs::absolute(file).lexically_normal().generic_string(), datasets::Provenance::real, Split::train});
    }
  }
  for (auto& cat : test.categories) {
    for (auto& ref : cat.real_images) ref.split = Split::test;
  }
  datasets::save_manifest(train, out / "train.jsonl");
  datasets::save_manifest(test, out / "test.jsonl");

  ExperimentResult r;
  r.command = "make-toy";
  r.name = config.name;
  r.config_digest = config.digest();
  r.manifest_digests["train"] = datasets::manifest_digest(train);
  r.manifest_digests["test"] = datasets::manifest_digest(test);
  r.dataset = config.name;
  r.metric = "images";
  r.value = static_cast<double>(train.total_images() + test.total_images());
  r.outputs = {out / "train.jsonl", out / "test.jsonl"};
  finish(r, out, clock);
  return r;
}

}  // namespace synthaug::pipeline
