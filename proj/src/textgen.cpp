// SPDX-License-Identifier: Apache-2.0

#include "synthaug/textgen.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

#include <fmt/core.h>

#include "synthaug/common.hpp"

namespace synthaug::textgen {

using nlohmann::json;

void DecodeConfig::validate() const {
  if (max_length < 1) throw InputError("decode max_length must be >= 1");
  if (beam_size < 1) throw InputError("decode beam_size must be >= 1");
}

namespace {

std::string keywords_of(const std::string& prompt) {
  const std::string p = trim(prompt);
  const std::string prefix = std::string(corpus::kPromptPrefix) + " ";
  if (p.size() > prefix.size() && p.starts_with(prefix) && p.back() == ':') {
    return p.substr(prefix.size(), p.size() - prefix.size() - 1);
  }
  return p;
}

std::string truncate_tokens(const std::string& text, int max_length) {
  const auto tokens = split_whitespace(text);
  std::string out;
  const std::size_t n = std::min(tokens.size(), static_cast<std::size_t>(max_length));
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// Rethrows the active exception with a context prefix, keeping its category.
[[noreturn]] void rethrow_with_context(const std::string& context) {
  try {
    throw;
  } catch (const BackendError& e) {
    throw BackendError(context + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError(context + ": " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(context + ": " + e.what());
  }
}

}  // namespace

std::string StubT2TBackend::generate(const std::string& prompt, const DecodeConfig& config) {
  return fmt::format("a photo of a {} in a realistic scene, variant {}", keywords_of(prompt),
                     config.seed % kVariants);
}

TrainingSummary StubT2TBackend::finetune(std::span<const corpus::PromptedCaption> records,
                                         int epochs) {
  ++finetune_calls_;
  TrainingSummary s;
  s.backend_id = id();
  s.epochs = epochs;
  s.records_seen = records.size() * static_cast<std::size_t>(epochs);
  // Synthetic, strictly decreasing loss curve.
  for (int e = 1; e <= epochs; ++e) s.nll_per_epoch.push_back(1.0 + 3.0 / (e + 1));
  return s;
}

ProcessT2TBackend::ProcessT2TBackend(std::string command)
    : process_(std::make_unique<LineProcess>(std::move(command))) {
  const auto info = process_->call({{"op", "info"}});
  id_ = info.value("backend_id", std::string("process-t2t"));
}

std::string ProcessT2TBackend::generate(const std::string& prompt, const DecodeConfig& config) {
  const auto r = process_->call({{"op", "generate"},
                                 {"prompt", prompt},
                                 {"max_length", config.max_length},
                                 {"beam_size", config.beam_size},
                                 {"seed", config.seed}});
  if (!r.contains("text") || !r["text"].is_string()) {
    throw BackendError(fmt::format("backend '{}': response lacks \"text\"", id_));
  }
  return r["text"].get<std::string>();
}

TrainingSummary ProcessT2TBackend::finetune(std::span<const corpus::PromptedCaption> records,
                                            int epochs) {
  std::lock_guard lock(process_->mutex());
  process_->send({{"op", "finetune"}, {"epochs", epochs}, {"records", records.size()}});
  for (const auto& r : records) process_->send({{"prompt", r.prompt}, {"target", r.target}});
  const auto resp = process_->receive();
  if (resp.contains("error")) {
    throw BackendError(fmt::format("backend '{}': fine-tune failed: {}", id_, resp["error"].dump()));
  }
  TrainingSummary s;
  s.backend_id = id_;
  s.epochs = epochs;
  s.records_seen = resp.value("records_seen", records.size() * static_cast<std::size_t>(epochs));
  s.nll_per_epoch = resp.value("nll_per_epoch", std::vector<double>{});
  return s;
}

std::unique_ptr<T2TBackend> make_t2t_backend(const std::string& spec) {
  if (spec == "stub") return std::make_unique<StubT2TBackend>();
  if (spec.starts_with("process:")) return std::make_unique<ProcessT2TBackend>(spec.substr(8));
  throw InputError(fmt::format("unknown t2t backend '{}' (expected stub or process:<cmd>)", spec));
}

TrainingSummary finetune(T2TBackend& backend, std::span<const corpus::PromptedCaption> records,
                         int epochs) {
  if (records.empty()) throw InputError("fine-tune needs at least one record");
  if (epochs < 1) throw InputError("fine-tune epochs must be >= 1");
  return backend.finetune(records, epochs);
}

Description gen_description(T2TBackend& backend, const LabelSpec& label,
                            const DecodeConfig& config) {
  if (trim(label.label_text).empty()) throw InputError("label_text is empty");
  config.validate();
  const std::string prompt = corpus::render_prompt({{label.label_text}});
  std::string text = truncate_tokens(backend.generate(prompt, config), config.max_length);
  if (text.empty()) throw BackendError("empty generation");
  return {std::move(text), label, backend.id(), config};
}

std::vector<Description> gen_description_batch(T2TBackend& backend,
                                               std::span<const LabelSpec> labels,
                                               const DecodeConfig& config,
                                               std::size_t variants_per_label) {
  if (variants_per_label < 1) throw InputError("variants_per_label must be >= 1");
  const std::size_t total = labels.size() * variants_per_label;
  std::vector<Description> out(total);
  std::vector<std::exception_ptr> errors(total);

  auto work = [&](std::size_t k) {
    const LabelSpec& label = labels[k / variants_per_label];
    const std::size_t v = k % variants_per_label;
    DecodeConfig c = config;
    c.seed = config.seed + v;
    try {
      out[k] = gen_description(backend, label, c);
    } catch (...) {
      errors[k] = std::current_exception();
    }
  };

  const std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
  const std::size_t workers = std::min({backend.max_parallelism(), hw, total});
  if (workers <= 1) {
    for (std::size_t k = 0; k < total; ++k) work(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t k; (k = next.fetch_add(1)) < total;) work(k);
      });
    }
  }

  // Report the first failure in input order, independent of scheduling.
  for (std::size_t k = 0; k < total; ++k) {
    if (!errors[k]) continue;
    const LabelSpec& label = labels[k / variants_per_label];
    try {
      std::rethrow_exception(errors[k]);
    } catch (...) {
      rethrow_with_context(fmt::format("label {} '{}' variant {}", label.class_id,
                                       label.label_text, k % variants_per_label));
    }
  }
  return out;
}

}  // namespace synthaug::textgen
