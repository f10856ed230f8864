// SPDX-License-Identifier: Apache-2.0

#include "synthaug/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iterator>
#include <sstream>
#include <unordered_set>

#include <fmt/core.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

namespace synthaug::corpus {

using nlohmann::json;

CaptionFormat parse_caption_format(std::string_view name) {
  if (name == "coco_json" || name == "coco") return CaptionFormat::coco_json;
  if (name == "tsv") return CaptionFormat::tsv;
  throw InputError(fmt::format("unknown caption format '{}' (expected coco_json or tsv)", name));
}

namespace {

Split split_from_filename(const std::filesystem::path& path) {
  const std::string name = path.filename().string();
  if (name.find("test") != std::string::npos) return Split::test;
  if (name.find("val") != std::string::npos) return Split::val;
  return Split::train;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError(fmt::format("cannot open caption file '{}'", path.string()));
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::string id_to_string(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  throw std::invalid_argument("image_id must be a string or integer");
}

}  // namespace

CaptionLoadResult load_captions(const std::filesystem::path& path, CaptionFormat format,
                                std::optional<Split> split) {
  const std::string content = read_file(path);
  const Split s = split.value_or(split_from_filename(path));
  CaptionLoadResult result;
  if (trim(content).empty()) return result;

  auto push = [&](std::string id, std::string text) {
    if (trim(text).empty()) {
      ++result.skipped_blank;
      return;
    }
    result.captions.push_back({std::move(id), std::move(text), s});
  };

  if (format == CaptionFormat::coco_json) {
    json doc;
    try {
      doc = json::parse(content);
    } catch (const json::parse_error& e) {
      throw InputError(fmt::format("{}: parse error at byte {}: {}", path.string(), e.byte, e.what()));
    }
    if (!doc.is_object() || !doc.contains("annotations") || !doc["annotations"].is_array()) {
      throw InputError(fmt::format("{}: missing top-level \"annotations\" array", path.string()));
    }
    const auto& anns = doc["annotations"];
    for (std::size_t i = 0; i < anns.size(); ++i) {
      const auto& a = anns[i];
      try {
        if (!a.contains("image_id") || !a.contains("caption") || !a["caption"].is_string()) {
          throw std::invalid_argument("expected \"image_id\" and string \"caption\"");
        }
        std::string id = id_to_string(a["image_id"]);
        if (id.empty()) throw std::invalid_argument("empty image_id");
        push(std::move(id), a["caption"].get<std::string>());
      } catch (const std::exception& e) {
        throw InputError(fmt::format("{}: annotation record {}: {}", path.string(), i, e.what()));
      }
    }
  } else {
    std::size_t offset = 0;
    std::size_t record = 0;
    std::istringstream in(content);
    std::string line;
    while (std::getline(in, line)) {
      const std::size_t line_offset = offset;
      offset += line.size() + 1;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (trim(line).empty()) continue;
      const auto tab = line.find('\t');
      if (tab == std::string::npos || tab == 0) {
        throw InputError(fmt::format("{}: record {} at byte {}: expected image_id<TAB>caption",
                                     path.string(), record, line_offset));
      }
      push(line.substr(0, tab), line.substr(tab + 1));
      ++record;
    }
  }
  if (result.skipped_blank > 0) {
    spdlog::warn("{}: skipped {} blank caption(s)", path.string(), result.skipped_blank);
  }
  return result;
}

std::vector<std::string> tokenize_caption(std::string_view text) {
  std::vector<std::string> tokens;
  for (const auto& raw : split_whitespace(text)) {
    std::size_t b = 0, e = raw.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(raw[e - 1]))) --e;
    if (b == e) continue;
    std::string tok = raw.substr(b, e - b);
    std::transform(tok.begin(), tok.end(), tok.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

namespace {

// Closed word classes. Anything listed here is never an entity.
const std::unordered_set<std::string_view> kDeterminers = {
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "another",
    "other", "no", "his", "her", "its", "their", "our", "my", "your", "both", "all", "several",
    "many", "few", "much", "more", "most", "one", "two", "three", "four", "five", "six", "seven",
    "eight", "nine", "ten", "lots", "lot", "couple", "pair", "group", "bunch"};

const std::unordered_set<std::string_view> kFunctionWords = {
    "of", "in", "on", "at", "by", "for", "with", "without", "near", "next", "to", "from", "into",
    "onto", "over", "under", "above", "below", "behind", "beside", "besides", "between", "across",
    "along", "around", "through", "inside", "outside", "up", "down", "off", "out", "against",
    "toward", "towards", "upon", "beneath", "underneath", "atop", "while", "as", "like", "than",
    "and", "or", "but", "nor", "so", "yet", "if", "then", "there", "here", "where", "when", "who",
    "whom", "whose", "which", "what", "it", "he", "she", "they", "them", "him", "we", "us", "i",
    "you", "me", "itself", "themselves", "himself", "herself", "very", "too", "also", "just",
    "not", "only", "still", "together", "away", "back", "about", "front", "top", "side"};

const std::unordered_set<std::string_view> kVerbs = {
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "do", "does",
    "did", "can", "could", "will", "would", "may", "might", "should", "must", "sits", "sit",
    "sat", "stands", "stand", "stood", "holds", "hold", "held", "rides", "ride", "rode", "eats",
    "eat", "ate", "looks", "look", "walks", "walk", "runs", "run", "ran", "plays", "play",
    "lies", "lie", "lay", "flies", "fly", "flew", "goes", "go", "went", "waits", "wait", "shows",
    "show", "carries", "carry", "chases", "chase", "throws", "throw", "catches", "catch",
    "takes", "take", "took", "wears", "wear", "filled", "covered", "parked", "made", "topped",
    "seen", "shown", "sitting", "standing", "holding", "riding", "eating", "looking", "walking",
    "running", "playing", "laying", "lying", "flying", "waiting", "carrying", "wearing",
    "using", "getting", "going", "driving", "watching", "talking", "cutting", "posing",
    "swinging", "hitting", "skiing", "surfing", "grazing", "resting", "leaning", "crossing"};

const std::unordered_set<std::string_view> kAdjectives = {
    "white", "black", "red", "blue", "green", "yellow", "orange", "purple", "pink", "brown",
    "gray", "grey", "silver", "gold", "golden", "dark", "light", "bright", "big", "large",
    "small", "little", "tiny", "huge", "giant", "tall", "short", "long", "old", "new", "young",
    "empty", "full", "open", "closed", "clean", "dirty", "wooden", "metal", "plastic", "glass",
    "hot", "cold", "wet", "dry", "busy", "quiet", "pretty", "nice", "good", "great", "fresh",
    "close", "different", "various", "same", "single", "double", "high", "low", "wide", "narrow",
    "outdoor", "indoor", "modern", "vintage", "realistic", "unusual", "sunny", "cloudy", "snowy",
    "grassy", "sandy", "rocky", "lush", "fancy", "plain", "striped", "multiple", "half", "calm", "still", "shiny", "soft"};

// Nouns that the adjective suffix rules would otherwise catch.
const std::unordered_set<std::string_view> kSuffixNouns = {
    "table", "tables", "cable", "vegetable", "vegetables", "olive", "olives",
    "dish", "fish", "radish"};

const std::unordered_set<std::string_view> kTrailingObjects = {
    "a", "an", "the", "some", "his", "her", "its", "their", "two", "three", "several"};

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() > suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool is_numeric(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isdigit(c) || c == '.' || c == ',';
  });
}

}  // namespace

std::vector<PosTag> RuleBasedTagger::tag(std::span<const std::string> tokens) const {
  std::vector<PosTag> tags(tokens.size(), PosTag::noun);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string_view t = tokens[i];
    const bool after_det = i > 0 && kDeterminers.contains(tokens[i - 1]);
    const bool before_det = i + 1 < tokens.size() && kTrailingObjects.contains(tokens[i + 1]);
    PosTag& tag = tags[i];
    if (t.size() < 2 || is_numeric(t) || kDeterminers.contains(t) || kFunctionWords.contains(t)) {
      tag = PosTag::other;
    } else if (kVerbs.contains(t)) {
      tag = PosTag::verb;
    } else if (kAdjectives.contains(t)) {
      tag = PosTag::adjective;
    } else if (ends_with(t, "ly")) {
      tag = PosTag::other;
    } else if (ends_with(t, "ing")) {
      // "a building" vs "people walking"
      tag = after_det ? PosTag::noun : PosTag::verb;
    } else if (ends_with(t, "ed")) {
      tag = PosTag::verb;
    } else if (kSuffixNouns.contains(t)) {
      tag = PosTag::noun;
    } else if (ends_with(t, "ous") || ends_with(t, "ful") || ends_with(t, "ive") ||
               ends_with(t, "able") || ends_with(t, "ible") || ends_with(t, "less") ||
               ends_with(t, "ish")) {
      tag = PosTag::adjective;
    } else if (ends_with(t, "s") && !ends_with(t, "ss") && before_det && i > 0 &&
               tags[i - 1] == PosTag::noun) {
      // third-person verb between a subject and its object: "dog chases a"
      tag = PosTag::verb;
    }
  }
  return tags;
}

EntitySet extract_entities(const Caption& caption, const EntityTagger& tagger) {
  const auto tokens = tokenize_caption(caption.text);
  const auto tags = tagger.tag(tokens);
  EntitySet out;
  std::unordered_set<std::string> seen;
  for (std::size_t i = 0; i < tokens.size() && i < tags.size(); ++i) {
    if (tags[i] != PosTag::noun) continue;
    if (kDeterminers.contains(tokens[i]) || kFunctionWords.contains(tokens[i])) continue;
    if (seen.insert(tokens[i]).second) out.entities.push_back(tokens[i]);
  }
  return out;
}

std::string render_prompt(const EntitySet& entities) {
  const auto& e = entities.entities;
  if (e.empty()) throw std::invalid_argument("no entities");
  std::string out(kPromptPrefix);
  out += ' ';
  if (e.size() == 1) {
    out += e[0];
  } else if (e.size() == 2) {
    out += e[0] + " and " + e[1];
  } else {
    for (std::size_t i = 0; i + 1 < e.size(); ++i) out += e[i] + ", ";
    out += "and " + e.back();
  }
  out += ':';
  return out;
}

std::vector<PromptedCaption> build_finetune_records(std::span<const Caption> captions,
                                                    const EntityTagger& tagger) {
  std::vector<PromptedCaption> records;
  for (const auto& c : captions) {
    if (c.split != Split::train) continue;
    const EntitySet entities = extract_entities(c, tagger);
    if (entities.empty()) continue;
    records.push_back({render_prompt(entities), c.text});
  }
  return records;
}

void write_finetune_records(std::ostream& out, std::span<const PromptedCaption> records) {
  for (const auto& r : records) {
    out << json{{"prompt", r.prompt}, {"target", r.target}}.dump() << '\n';
  }
}

std::vector<PromptedCaption> read_finetune_records(std::istream& in) {
  std::vector<PromptedCaption> out;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      out.push_back({j.at("prompt").get<std::string>(), j.at("target").get<std::string>()});
    } catch (const json::exception& e) {
      throw InputError(fmt::format("fine-tune record {}: {}", index, e.what()));
    }
    ++index;
  }
  return out;
}

}  // namespace synthaug::corpus
