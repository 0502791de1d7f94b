// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0
//
// Character-level vocabulary, JSON-lines corpus ingestion and variable-length
// prefix sampling for discriminator training.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "coopgen/rng.hpp"

namespace coopgen {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr TokenId kBos = 0;
inline constexpr TokenId kEos = 1;
inline constexpr TokenId kPad = 2;
inline constexpr std::size_t kNumSpecialTokens = 3;

/// Sequences (BOS included) are truncated to this many tokens at load.
inline constexpr std::size_t kMaxSequenceLength = 64;

std::u32string utf8_to_u32(std::string_view text);
std::string u32_to_utf8(std::u32string_view text);

class Vocabulary {
 public:
  Vocabulary() = default;

  /// Distinct characters of `text`, sorted by code point, take ids 3, 4, ...
  /// Throws IngestionError on an empty stream.
  static Vocabulary build(std::string_view utf8_text);
  static Vocabulary from_alphabet(std::u32string_view alphabet);

  std::size_t size() const { return kNumSpecialTokens + alphabet_.size(); }
  const std::u32string& alphabet() const { return alphabet_; }
  std::string alphabet_utf8() const { return u32_to_utf8(alphabet_); }

  std::optional<TokenId> find(char32_t c) const;
  /// Throws IndexError for special or out-of-range ids.
  char32_t char_of(TokenId id) const;

  bool operator==(const Vocabulary& other) const { return alphabet_ == other.alphabet_; }

 private:
  std::u32string alphabet_;
  std::unordered_map<char32_t, TokenId> ids_;
};

/// BOS followed by one id per character. Throws EncodingError naming the
/// first uncovered character and its code-point offset.
TokenSequence encode(const Vocabulary& vocab, std::string_view text);
/// Inverse of encode: a leading BOS is dropped, decoding stops at EOS, PAD is skipped.
std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids);

struct LabeledExample {
  TokenSequence tokens;  // BOS-prefixed
  std::size_t label = 0;

  bool operator==(const LabeledExample&) const = default;
};

enum class Split { train, validation, test, oracle_train };

std::string_view split_name(Split split);

struct LabeledCorpus {
  std::vector<LabeledExample> examples;
  std::size_t num_classes = 0;
  Split split = Split::train;

  bool operator==(const LabeledCorpus&) const = default;
};

struct RawExample {
  std::string text;
  std::size_t label = 0;
};

/// Sidecar `meta.json` next to the split files.
struct CorpusMetadata {
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  std::string alphabet;  // UTF-8; empty when the dataset does not declare one
};

inline constexpr std::string_view kMetadataFileName = "meta.json";

CorpusMetadata read_metadata(const std::filesystem::path& path);
void write_metadata(const std::filesystem::path& path, const CorpusMetadata& meta);

/// Parses one {"text": ..., "label": ...} object per line. ParseError (with
/// line number) for malformed lines, ValidationError for label >= num_classes,
/// IngestionError for an empty file.
std::vector<RawExample> read_jsonl(const std::filesystem::path& path, std::size_t num_classes);

LabeledCorpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab,
                          std::size_t num_classes, Split split);
/// Reads num_classes and the alphabet from the sidecar metadata in the same
/// directory; the alphabet is built from the file when the sidecar has none.
LabeledCorpus load_corpus(const std::filesystem::path& path, Split split = Split::train);

/// A dataset directory: meta.json plus train/validation/test/oracle_train JSONL.
struct Dataset {
  CorpusMetadata metadata;
  Vocabulary vocab;
  LabeledCorpus train;
  LabeledCorpus validation;
  LabeledCorpus test;
  LabeledCorpus oracle_train;

  const LabeledCorpus& split(Split which) const;
};

std::filesystem::path split_path(const std::filesystem::path& dir, Split split);
Dataset load_dataset(const std::filesystem::path& dir);

/// BOS plus the first k content tokens, k ~ Uniform{1..T}. ValidationError
/// when the example has no content token.
LabeledExample sample_training_prefix(const LabeledExample& example, Rng& rng);

}  // namespace coopgen
