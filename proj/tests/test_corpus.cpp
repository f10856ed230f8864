// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <fstream>
#include <sstream>

#include "oracles/pos_lexicon.hpp"
#include "synthaug/corpus.hpp"
#include "test_util.hpp"

using namespace synthaug;
using namespace synthaug::corpus;

namespace {

EntitySet entities_of(const std::string& text) {
  return extract_entities(Caption{"1", text, Split::train}, RuleBasedTagger{});
}

std::vector<std::string> words(std::initializer_list<const char*> w) { return {w.begin(), w.end()}; }

}  // namespace

TEST_CASE("coco annotations load in file order") {
  testutil::TempDir dir("corpus");
  testutil::write_text(dir / "captions_train.json",
                       R"({"images":[],"annotations":[
                           {"image_id": 9, "id": 1, "caption": "a white bike near the wall"},
                           {"image_id": "x2", "id": 2, "caption": "a dog with a frisbee"}]})");
  const auto r = load_captions(dir / "captions_train.json", CaptionFormat::coco_json);
  REQUIRE(r.captions.size() == 2);
  CHECK(r.captions[0].image_id == "9");
  CHECK(r.captions[0].text == "a white bike near the wall");
  CHECK(r.captions[1].image_id == "x2");
  CHECK(r.captions[1].split == Split::train);
}

TEST_CASE("whitespace-only captions are skipped and counted") {
  testutil::TempDir dir("corpus");
  testutil::write_text(dir / "c.json", R"({"annotations":[
      {"image_id": 1, "caption": "  "}, {"image_id": 2, "caption": "a cat"}]})");
  const auto r = load_captions(dir / "c.json", CaptionFormat::coco_json);
  CHECK(r.captions.size() == 1);
  CHECK(r.skipped_blank == 1);
}

TEST_CASE("five captions for each of three images give fifteen captions") {
  testutil::TempDir dir("corpus");
  std::ostringstream doc;
  doc << R"({"annotations":[)";
  for (int img = 0; img < 3; ++img) {
    for (int k = 0; k < 5; ++k) {
      if (img || k) doc << ",";
      doc << R"({"image_id":)" << img << R"(,"caption":"caption )" << k << R"("})";
    }
  }
  doc << "]}";
  testutil::write_text(dir / "captions_val2014.json", doc.str());
  const auto r = load_captions(dir / "captions_val2014.json", CaptionFormat::coco_json);
  CHECK(r.captions.size() == 15);
  CHECK(r.captions[0].split == Split::val);
  const auto forced = load_captions(dir / "captions_val2014.json", CaptionFormat::coco_json,
                                    Split::test);
  CHECK(forced.captions[14].split == Split::test);
}

TEST_CASE("tsv captions and error positions") {
  testutil::TempDir dir("corpus");
  testutil::write_text(dir / "a.tsv", "1\ta cat on a mat\n2\ta dog\n");
  const auto r = load_captions(dir / "a.tsv", CaptionFormat::tsv);
  REQUIRE(r.captions.size() == 2);
  CHECK(r.captions[1].text == "a dog");

  testutil::write_text(dir / "bad.tsv", "1\tok\nno tab here\n");
  try {
    load_captions(dir / "bad.tsv", CaptionFormat::tsv);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("record 1 at byte 5") != std::string::npos);
  }

  testutil::write_text(dir / "bad.json", R"({"annotations": [ {"image_id": 1,)");
  try {
    load_captions(dir / "bad.json", CaptionFormat::coco_json);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }

  testutil::write_text(dir / "rec.json", R"({"annotations": [{"image_id": 1, "caption": "a"}, {"caption": "b"}]})");
  try {
    load_captions(dir / "rec.json", CaptionFormat::coco_json);
    FAIL("expected an error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("annotation record 1") != std::string::npos);
  }
}

TEST_CASE("empty caption file is not an error") {
  testutil::TempDir dir("corpus");
  testutil::write_text(dir / "empty.tsv", "");
  CHECK(load_captions(dir / "empty.tsv", CaptionFormat::tsv).captions.empty());
  testutil::write_text(dir / "empty.json", "");
  CHECK(load_captions(dir / "empty.json", CaptionFormat::coco_json).captions.empty());
  CHECK_THROWS_AS(load_captions(dir / "missing.json", CaptionFormat::coco_json), InputError);
}

TEST_CASE("rule-based tagger agrees with the hand-tagged reference") {
  for (const auto& tc : oracle::tagged_captions()) {
    CAPTURE(tc.text);
    CHECK(entities_of(tc.text).entities == tc.nouns);
  }
}

TEST_CASE("entities are a subset of the lowercased tokens and never stopwords") {
  for (const auto& tc : oracle::tagged_captions()) {
    const auto toks = tokenize_caption(tc.text);
    for (const auto& e : entities_of(tc.text).entities) {
      CHECK(std::find(toks.begin(), toks.end(), e) != toks.end());
      CHECK(e != "a");
      CHECK(e != "the");
      CHECK(e != "of");
    }
  }
}

TEST_CASE("pluggable tagger drives extraction") {
  struct AllNouns final : EntityTagger {
    std::vector<PosTag> tag(std::span<const std::string> t) const override {
      return std::vector<PosTag>(t.size(), PosTag::noun);
    }
  };
  const auto e = extract_entities(Caption{"1", "Red red BALL", Split::train}, AllNouns{});
  CHECK(e.entities == words({"red", "ball"}));
}

TEST_CASE("render_prompt list rules") {
  CHECK(render_prompt({words({"dog", "frisbee", "park"})}) ==
        "Write an image description with keywords including dog, frisbee, and park:");
  CHECK(render_prompt({words({"bike"})}) ==
        "Write an image description with keywords including bike:");
  CHECK(render_prompt({words({"dog", "frisbee"})}) ==
        "Write an image description with keywords including dog and frisbee:");
  try {
    render_prompt({});
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()) == "no entities");
  }
}

TEST_CASE("render_prompt matches the golden prompts byte for byte") {
  std::ifstream in(std::string(SYNTHAUG_GOLDEN_DIR) + "/prompts.txt", std::ios::binary);
  REQUIRE(in);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto tab = line.find('\t');
    EntitySet set;
    std::stringstream ss(line.substr(0, tab));
    for (std::string w; std::getline(ss, w, ',');) set.entities.push_back(w);
    CHECK(render_prompt(set) == line.substr(tab + 1));
    ++n;
  }
  CHECK(n == 4);
}

TEST_CASE("render_prompt is deterministic and separates distinct sets") {
  const std::vector<EntitySet> sets = {
      {words({"a1"})}, {words({"a1", "b2"})}, {words({"b2", "a1"})},
      {words({"a1", "b2", "c3"})}, {words({"a1", "c3", "b2"})}};
  for (std::size_t i = 0; i < sets.size(); ++i) {
    CHECK(render_prompt(sets[i]) == render_prompt(sets[i]));
    const auto p = render_prompt(sets[i]);
    CHECK(p.rfind(std::string(kPromptPrefix), 0) == 0);
    CHECK(p.back() == ':');
    for (std::size_t j = i + 1; j < sets.size(); ++j) CHECK(p != render_prompt(sets[j]));
  }
}

TEST_CASE("finetune records: exclusion, order, byte-identical targets") {
  std::vector<Caption> caps;
  for (int i = 0; i < 9; ++i) caps.push_back({std::to_string(i), "  A cat on mat " + std::to_string(i) + "!", Split::train});
  caps.insert(caps.begin() + 4, Caption{"x", "running quickly", Split::train});
  caps.push_back({"v", "a dog in a park", Split::val});
  const auto recs = build_finetune_records(caps, RuleBasedTagger{});
  REQUIRE(recs.size() == 9);
  for (int i = 0; i < 9; ++i) {
    CHECK(recs[i].target == "  A cat on mat " + std::to_string(i) + "!");
  }
  CHECK(build_finetune_records({}, RuleBasedTagger{}).empty());

  const Caption bike{"1", "a white bike near the wall", Split::train};
  const auto r = build_finetune_records(std::span(&bike, 1), RuleBasedTagger{});
  REQUIRE(r.size() == 1);
  CHECK(r[0].prompt == "Write an image description with keywords including bike and wall:");
  CHECK(r[0].target == bike.text);

  std::stringstream io;
  write_finetune_records(io, recs);
  CHECK(read_finetune_records(io) == recs);
}
