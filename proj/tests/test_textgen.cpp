// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "synthaug/textgen.hpp"

using namespace synthaug;
using namespace synthaug::textgen;

namespace {

std::vector<corpus::PromptedCaption> records(std::size_t n) {
  std::vector<corpus::PromptedCaption> r;
  for (std::size_t i = 0; i < n; ++i) {
    r.push_back({corpus::render_prompt({{"dog"}}), "a dog number " + std::to_string(i)});
  }
  return r;
}

const std::string kServer = SYNTHAUG_STUB_SERVER;

}  // namespace

TEST_CASE("decode defaults") {
  DecodeConfig c;
  CHECK(c.max_length == 20);
  CHECK(c.beam_size == 5);
  CHECK(kDefaultFinetuneEpochs == 5);
  c.max_length = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
  c.max_length = 1;
  c.beam_size = 0;
  CHECK_THROWS_AS(c.validate(), InputError);
}

TEST_CASE("stub finetune counts records and decreases nll") {
  StubT2TBackend b;
  const auto recs = records(9);
  const auto s = finetune(b, recs, 5);
  CHECK(s.records_seen == 45);
  CHECK(s.epochs == 5);
  REQUIRE(s.nll_per_epoch.size() == 5);
  for (std::size_t k = 1; k < 5; ++k) CHECK(s.nll_per_epoch[k] < s.nll_per_epoch[k - 1]);
  CHECK(s.final_nll() == s.nll_per_epoch.back());
  CHECK(b.finetune_calls() == 1);
  CHECK(finetune(b, recs).epochs == kDefaultFinetuneEpochs);
  CHECK_THROWS_AS(finetune(b, {}, 5), InputError);
  CHECK_THROWS_AS(finetune(b, recs, 0), InputError);
}

TEST_CASE("stub description for bike") {
  StubT2TBackend b;
  const auto d = gen_description(b, {0, "bike"}, DecodeConfig{});
  CHECK(d.text == "a photo of a bike in a realistic scene, variant 0");
  CHECK(d.backend_id == "stub-t2t-v1");
  CHECK(d.decode_config == DecodeConfig{});
  CHECK(d.source_label == LabelSpec{0, "bike"});
  CHECK_THROWS_AS(gen_description(b, {0, " "}, DecodeConfig{}), InputError);
}

TEST_CASE("length bound holds for every max_length") {
  StubT2TBackend b;
  for (int n = 1; n <= 20; ++n) {
    DecodeConfig c;
    c.max_length = n;
    const auto d = gen_description(b, {0, "traffic light"}, c);
    CHECK(static_cast<int>(split_whitespace(d.text).size()) <= n);
    CHECK_FALSE(d.text.empty());
  }
}

TEST_CASE("batch ordering is label-major, variant-minor") {
  StubT2TBackend b;
  const std::vector<LabelSpec> labels = {{0, "bike"}, {1, "chair"}, {2, "apple"}};
  const auto out = gen_description_batch(b, labels, DecodeConfig{}, 2);
  REQUIRE(out.size() == 6);
  for (std::size_t k = 0; k < 6; ++k) {
    CHECK(out[k].source_label == labels[k / 2]);
    CHECK(out[k].decode_config.seed == k % 2);
    CHECK(out[k].text.find(labels[k / 2].label_text) != std::string::npos);
    CHECK(out[k].text.find("variant " + std::to_string(k % 2)) != std::string::npos);
  }
  const auto again = gen_description_batch(b, labels, DecodeConfig{}, 2);
  for (std::size_t k = 0; k < 6; ++k) CHECK(again[k].text == out[k].text);

  const auto single = gen_description_batch(b, labels, DecodeConfig{}, 1);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(single[k].text == gen_description(b, labels[k], DecodeConfig{}).text);
  }
  CHECK_THROWS_AS(gen_description_batch(b, labels, DecodeConfig{}, 0), InputError);
}

TEST_CASE("stub output always contains the label") {
  StubT2TBackend b;
  for (const char* l : {"bike", "hot dog", "a", "potted plant", "tv"}) {
    for (std::uint64_t s = 0; s < 20; ++s) {
      DecodeConfig c;
      c.seed = s;
      CHECK(gen_description(b, {0, l}, c).text.find(l) != std::string::npos);
    }
  }
}

TEST_CASE("empty generation is an error that names the label") {
  struct Silent final : T2TBackend {
    std::string id() const override { return "silent"; }
    std::string generate(const std::string&, const DecodeConfig&) override { return "  "; }
    TrainingSummary finetune(std::span<const corpus::PromptedCaption>, int) override { return {}; }
  };
  Silent s;
  try {
    gen_description(s, {0, "bike"}, DecodeConfig{});
    FAIL("expected an error");
  } catch (const BackendError& e) {
    CHECK(std::string(e.what()) == "empty generation");
  }
  const std::vector<LabelSpec> labels = {{0, "bike"}, {1, "chair"}};
  try {
    gen_description_batch(s, labels, DecodeConfig{}, 1);
    FAIL("expected an error");
  } catch (const BackendError& e) {
    CHECK(std::string(e.what()).find("'bike'") != std::string::npos);
    CHECK(std::string(e.what()).find("empty generation") != std::string::npos);
  }
}

TEST_CASE("process backend matches the in-process stub") {
  auto proc = make_t2t_backend("process:" + kServer);
  CHECK(proc->id() == "process-stub-t2t-v1");
  StubT2TBackend stub;
  for (std::uint64_t s = 0; s < 3; ++s) {
    DecodeConfig c;
    c.seed = s;
    CHECK(gen_description(*proc, {0, "bike"}, c).text ==
          gen_description(stub, {0, "bike"}, c).text);
  }
  const auto recs = records(9);
  const auto sum = finetune(*proc, recs, 5);
  CHECK(sum.records_seen == 45);
  CHECK(sum.nll_per_epoch.size() == 5);
}

TEST_CASE("process backend failures are transport errors") {
  CHECK_THROWS_AS(make_t2t_backend("process:/nonexistent/backend-binary"), BackendError);
  auto dying = make_t2t_backend("process:" + kServer + " --fail-after 1");
  CHECK_NOTHROW(gen_description(*dying, {0, "bike"}, DecodeConfig{}));
  try {
    gen_description(*dying, {0, "bike"}, DecodeConfig{});
    FAIL("expected an error");
  } catch (const BackendError& e) {
    CHECK(std::string(e.what()).find("retry") != std::string::npos);
  }
  auto empty = make_t2t_backend("process:" + kServer + " --empty-text");
  CHECK_THROWS_AS(gen_description(*empty, {0, "bike"}, DecodeConfig{}), BackendError);
  CHECK_THROWS_AS(make_t2t_backend("gpt2"), InputError);
}
