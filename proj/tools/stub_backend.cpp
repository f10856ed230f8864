// SPDX-License-Identifier: Apache-2.0
//
// Out-of-process backend speaking the newline-delimited JSON protocol on
// stdin/stdout. It wraps the in-process stubs so the process transport can
// be exercised without a model. Requests with "op" go to the text stub,
// requests with "stage" to the image stub.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "synthaug/common.hpp"
#include "synthaug/imagegen.hpp"
#include "synthaug/textgen.hpp"

using nlohmann::json;
using namespace synthaug;

int main(int argc, char** argv) {
  CLI::App app{"stub generation backend over stdio"};
  int fail_after = -1;
  bool empty_text = false;
  app.add_option("--fail-after", fail_after, "exit without replying after N generation requests");
  app.add_flag("--empty-text", empty_text, "answer every text request with an empty string");
  CLI11_PARSE(app, argc, argv);

  textgen::StubT2TBackend text;
  imagegen::StubT2IBackend image;
  int served = 0;
  std::string line;
  while (std::getline(std::cin, line)) {
    if (line.empty()) continue;
    json req, resp;
    try {
      req = json::parse(line);
      if (req.contains("op")) {
        const auto op = req["op"].get<std::string>();
        if (op == "info") {
          resp = {{"backend_id", "process-stub-t2t-v1"}};
        } else if (op == "generate") {
          if (fail_after >= 0 && served++ >= fail_after) return 1;
          textgen::DecodeConfig c;
          c.max_length = req.at("max_length");
          c.beam_size = req.at("beam_size");
          c.seed = req.at("seed");
          resp = {{"text", empty_text ? "" : text.generate(req.at("prompt"), c)}};
        } else if (op == "finetune") {
          const int epochs = req.at("epochs");
          const std::size_t n = req.at("records");
          std::vector<corpus::PromptedCaption> recs;
          for (std::size_t i = 0; i < n && std::getline(std::cin, line); ++i) {
            const auto r = json::parse(line);
            recs.push_back({r.at("prompt"), r.at("target")});
          }
          const auto s = text.finetune(recs, epochs);
          resp = {{"records_seen", s.records_seen}, {"nll_per_epoch", s.nll_per_epoch}};
        } else {
          resp = {{"error", "unknown op " + op}};
        }
      } else {
        const auto stage = req.at("stage").get<std::string>();
        if (stage == "info") {
          resp = {{"backend_id", "process-stub-t2i-v1"}};
        } else if (stage == "base" || stage == "upsample") {
          if (fail_after >= 0 && served++ >= fail_after) return 1;
          const std::string prompt = req.at("prompt");
          const std::uint64_t seed = req.at("seed");
          Image out;
          if (stage == "base") {
            out = image.generate_base(prompt, seed);
          } else {
            const auto& in = req.at("image");
            Image base(in.at("width"), in.at("height"),
                       base64_decode(in.at("pixels").get<std::string>()));
            out = image.upsample(base, prompt, seed);
          }
          resp = {{"width", out.width()}, {"height", out.height()},
                  {"pixels", base64_encode(out.bytes())}};
        } else if (stage == "finetune") {
          resp = {{"ok", true}};
        } else {
          resp = {{"error", "unknown stage " + stage}};
        }
      }
    } catch (const std::exception& e) {
      resp = {{"error", e.what()}};
    }
    std::cout << resp.dump() << '\n' << std::flush;
  }
  return 0;
}
