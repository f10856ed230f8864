// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "synthaug/common.hpp"

namespace synthaug::corpus {

struct Caption {
  std::string image_id;
  std::string text;
  Split split = Split::train;
};

/// Lowercase nouns of a caption, deduplicated, in first-occurrence order.
struct EntitySet {
  std::vector<std::string> entities;

  bool empty() const { return entities.empty(); }
  bool operator==(const EntitySet&) const = default;
};

/// Fine-tuning record: the keyword prompt and the caption it should produce.
struct PromptedCaption {
  std::string prompt;
  std::string target;

  bool operator==(const PromptedCaption&) const = default;
};

inline constexpr std::string_view kPromptPrefix =
    "Write an image description with keywords including";

enum class CaptionFormat { coco_json, tsv };

CaptionFormat parse_caption_format(std::string_view name);

struct CaptionLoadResult {
  std::vector<Caption> captions;
  std::size_t skipped_blank = 0;  // whitespace-only captions dropped
};

/// Reads a COCO captions annotation file or an `image_id<TAB>caption` file.
///
/// When `split` is not given it is inferred from the file name ("val"/"test"
/// substrings), defaulting to train. Malformed input raises InputError naming
/// the byte offset or record index.
CaptionLoadResult load_captions(const std::filesystem::path& path, CaptionFormat format,
                                std::optional<Split> split = std::nullopt);

enum class PosTag { noun, verb, adjective, other };

/// Per-token part-of-speech source used for entity extraction.
class EntityTagger {
 public:
  virtual ~EntityTagger() = default;
  virtual std::vector<PosTag> tag(std::span<const std::string> tokens) const = 0;
};

/// Dependency-free tagger: closed-class stop lists plus suffix heuristics.
/// Anything not ruled out is a noun.
class RuleBasedTagger final : public EntityTagger {
 public:
  std::vector<PosTag> tag(std::span<const std::string> tokens) const override;
};

/// Lowercased words with surrounding punctuation removed.
std::vector<std::string> tokenize_caption(std::string_view text);

EntitySet extract_entities(const Caption& caption, const EntityTagger& tagger);

/// "Write an image description with keywords including a, b, and c:".
/// Two entities are joined by "and", one is used bare. Empty sets throw.
std::string render_prompt(const EntitySet& entities);

/// One record per train-split caption that has at least one entity.
std::vector<PromptedCaption> build_finetune_records(std::span<const Caption> captions,
                                                    const EntityTagger& tagger);

/// Newline-delimited JSON, one {"prompt","target"} object per line.
void write_finetune_records(std::ostream& out, std::span<const PromptedCaption> records);
std::vector<PromptedCaption> read_finetune_records(std::istream& in);

}  // namespace synthaug::corpus
