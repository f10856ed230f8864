// SPDX-License-Identifier: Apache-2.0

#include "synthaug/cli.hpp"

#include <functional>
#include <map>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "synthaug/common.hpp"
#include "synthaug/pipeline.hpp"

namespace synthaug::cli {

namespace {

using pipeline::PipelineConfig;

void bind_options(CLI::App& app, PipelineConfig& c) {
  // Option names double as config-file keys, so they keep underscores.
  app.add_option("--captions", c.captions, "caption file (COCO JSON or id<TAB>caption)");
  app.add_option("--caption_format", c.caption_format, "coco_json or tsv");
  app.add_option("--labels", c.labels, "label texts, class ids in order");
  app.add_option("--labels_file", c.labels_file, "one label per line");
  app.add_option("--dataset", c.dataset, "real-image manifest (train: the built dataset)");
  app.add_option("--test_dataset", c.test_dataset, "test manifest");
  app.add_option("--descriptions", c.descriptions, "gen-descriptions output");
  app.add_option("--images_manifest", c.images_manifest, "gen-images output");
  app.add_option("--adversarial_dir", c.adversarial_dir, "directory of <label>/*.png");
  app.add_option("--t2t_backend", c.t2t_backend, "stub or process:<command>");
  app.add_option("--t2i_backend", c.t2i_backend, "stub or process:<command>");
  app.add_option("--ratio", c.ratio, "synthetic images per real image");
  app.add_option("--prompt_source", c.prompt_source, "label or description");
  app.add_option("--seed", c.seed, "global seed");
  app.add_option("--variants_per_label", c.variants_per_label, "descriptions per label");
  app.add_flag("--long_tail", c.long_tail, "keep max(1, floor(i*m/n)) real images in class i");
  app.add_option("--few_shot", c.few_shot, "real images kept per class (0 keeps all)");
  app.add_option("--adversarial_per_class", c.adversarial_per_class,
                 "out-of-distribution images gen-images writes per class");
  app.add_flag("--manifest_only", c.manifest_only, "plan synthetic entries without rendering");
  app.add_option("--max_length", c.max_length, "description length bound in tokens");
  app.add_option("--beam_size", c.beam_size, "beam width");
  app.add_option("--finetune_epochs", c.finetune_epochs, "text generator fine-tuning epochs");
  app.add_option("--width", c.width, "dataset image width");
  app.add_option("--height", c.height, "dataset image height");
  app.add_option("--classifier", c.classifier, "convnet or softmax");
  app.add_option("--epochs", c.train.epochs);
  app.add_option("--batch_size", c.train.batch_size);
  app.add_option("--base_lr", c.train.base_lr);
  app.add_option("--momentum", c.train.momentum);
  app.add_option("--weight_decay", c.train.weight_decay);
  app.add_option("--milestones", c.train.milestones, "epochs where the learning rate decays");
  app.add_option("--gamma", c.train.gamma, "decay factor");
  app.add_option("--warmup_epochs", c.train.warmup_epochs);
  app.add_option("--seeds", c.train.seeds, "training seeds");
  app.add_option("--holdout_fraction", c.train.holdout_fraction, "validation share of train");
  app.add_option("--checkpoint", c.checkpoint, "classifier checkpoint for evaluate");
  app.add_option("--hypotheses", c.hypotheses, "generated captions (JSONL)");
  app.add_option("--references", c.references, "reference captions (JSONL)");
  app.add_option("--ratios", c.ratios, "sweep ratios");
  app.add_option("--max_ratios", c.max_ratios, "ratios the max row chooses from");
  app.add_option("--results", c.results, "result files for report; the first is the baseline");
  app.add_option("--metric", c.metric, "accuracy, bleu4, rouge_l or cider_d");
  app.add_option("--toy_per_class", c.toy_per_class, "make-toy train images per class");
  app.add_option("--toy_test_per_class", c.toy_test_per_class, "make-toy test images per class");
  app.add_option("--name", c.name, "experiment name");
  app.add_option("--out_dir", c.out_dir, "output directory");
  app.add_option("--cache_dir", c.cache_dir,
                 fmt::format("image cache root (default ${}, then <out_dir>/cache)",
                             pipeline::kCacheEnv));
  // Lists may be empty, which is how an echoed config writes them.
  for (const char* list : {"--labels", "--milestones", "--seeds", "--ratios", "--max_ratios",
                           "--results"}) {
    app.get_option(list)->expected(0, CLI::detail::expected_max_vector_size);
  }
}

using Command = std::function<pipeline::ExperimentResult(const PipelineConfig&)>;

const std::map<std::string, std::pair<Command, std::string>>& commands() {
  static const std::map<std::string, std::pair<Command, std::string>> k = {
      {"finetune-t2t", {pipeline::cmd_finetune_t2t, "fine-tune the text generator on captions"}},
      {"gen-descriptions", {pipeline::cmd_gen_descriptions, "generate label descriptions"}},
      {"gen-images", {pipeline::cmd_gen_images, "generate synthetic images into the cache"}},
      {"build-dataset", {pipeline::cmd_build_dataset, "combine real and synthetic images"}},
      {"train", {pipeline::cmd_train, "train and test a classifier over the seeds"}},
      {"evaluate", {pipeline::cmd_evaluate, "score a checkpoint or generated captions"}},
      {"sweep", {pipeline::cmd_sweep, "train at several synthetic ratios"}},
      {"report", {pipeline::cmd_report, "delta table from result files"}},
      {"make-toy", {pipeline::cmd_make_toy, "render a small stub dataset"}},
  };
  return k;
}

void setup_logging(const std::string& level) {
  auto logger = std::make_shared<spdlog::logger>(
      "synthaug", std::make_shared<spdlog::sinks::stderr_sink_mt>());
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(level));
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"Synthetic data augmentation experiments."};
  app.set_config("--config", "", "TOML config file; command-line flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  PipelineConfig config;
  bind_options(app, config);
  std::string log_level = "info";
  app.add_option("--log_level", log_level, "trace, debug, info, warn, error, off")
      ->configurable(false);
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, entry] : commands()) {
    subs[name] = app.add_subcommand(name, entry.second)->fallthrough();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }
  setup_logging(log_level);

  std::string chosen;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) chosen = name;
  }
  try {
    commands().at(chosen).first(config);
    return kExitOk;
  } catch (const InputError& e) {
    spdlog::error("{}", e.what());
    return kExitInput;
  } catch (const BackendError& e) {
    spdlog::error("{}", e.what());
    return kExitBackend;
  } catch (const PartialFailure& e) {
    spdlog::error("{}", e.what());
    return kExitPartial;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitOther;
  }
}

}  // namespace synthaug::cli
