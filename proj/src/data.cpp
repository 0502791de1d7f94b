// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include "coopgen/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "coopgen/errors.hpp"
#include "json.hpp"

namespace coopgen {

namespace {

std::string describe_char(char32_t c) {
  std::ostringstream out;
  out << "U+" << std::hex << std::uppercase << static_cast<std::uint32_t>(c);
  if (c >= 0x20 && c < 0x7f) out << " '" << static_cast<char>(c) << "'";
  return out.str();
}

}  // namespace

std::u32string utf8_to_u32(std::string_view text) {
  std::u32string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t extra = 0;
    char32_t cp = 0;
    if (lead < 0x80) {
      cp = lead;
    } else if ((lead & 0xE0) == 0xC0) {
      cp = lead & 0x1F;
      extra = 1;
    } else if ((lead & 0xF0) == 0xE0) {
      cp = lead & 0x0F;
      extra = 2;
    } else if ((lead & 0xF8) == 0xF0) {
      cp = lead & 0x07;
      extra = 3;
    } else {
      throw EncodingError("invalid UTF-8 lead byte at byte " + std::to_string(i), lead, i);
    }
    if (i + extra >= text.size() && extra > 0) {
      throw EncodingError("truncated UTF-8 sequence at byte " + std::to_string(i), lead, i);
    }
    for (std::size_t k = 1; k <= extra; ++k) {
      const auto cont = static_cast<unsigned char>(text[i + k]);
      if ((cont & 0xC0) != 0x80) {
        throw EncodingError("invalid UTF-8 continuation at byte " + std::to_string(i + k), cont,
                            i + k);
      }
      cp = (cp << 6) | (cont & 0x3F);
    }
    out.push_back(cp);
    i += extra + 1;
  }
  return out;
}

std::string u32_to_utf8(std::u32string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char32_t cp : text) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

Vocabulary Vocabulary::build(std::string_view utf8_text) {
  if (utf8_text.empty()) throw IngestionError("cannot build a vocabulary from an empty stream");
  return from_alphabet(utf8_to_u32(utf8_text));
}

Vocabulary Vocabulary::from_alphabet(std::u32string_view alphabet) {
  std::set<char32_t> distinct(alphabet.begin(), alphabet.end());
  Vocabulary vocab;
  vocab.alphabet_.assign(distinct.begin(), distinct.end());
  for (std::size_t i = 0; i < vocab.alphabet_.size(); ++i) {
    vocab.ids_.emplace(vocab.alphabet_[i], static_cast<TokenId>(kNumSpecialTokens + i));
  }
  return vocab;
}

std::optional<TokenId> Vocabulary::find(char32_t c) const {
  const auto it = ids_.find(c);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

char32_t Vocabulary::char_of(TokenId id) const {
  if (id < static_cast<TokenId>(kNumSpecialTokens) || static_cast<std::size_t>(id) >= size()) {
    throw IndexError("token id " + std::to_string(id) + " has no character");
  }
  return alphabet_[static_cast<std::size_t>(id) - kNumSpecialTokens];
}

TokenSequence encode(const Vocabulary& vocab, std::string_view text) {
  const std::u32string chars = utf8_to_u32(text);
  TokenSequence ids;
  ids.reserve(chars.size() + 1);
  ids.push_back(kBos);
  for (std::size_t offset = 0; offset < chars.size(); ++offset) {
    const auto id = vocab.find(chars[offset]);
    if (!id) {
      throw EncodingError("character " + describe_char(chars[offset]) + " at offset " +
                              std::to_string(offset) + " is not in the vocabulary",
                          chars[offset], offset);
    }
    ids.push_back(*id);
  }
  return ids;
}

std::string decode(const Vocabulary& vocab, std::span<const TokenId> ids) {
  std::u32string chars;
  std::size_t start = (!ids.empty() && ids.front() == kBos) ? 1 : 0;
  for (std::size_t i = start; i < ids.size(); ++i) {
    if (ids[i] == kEos) break;
    if (ids[i] == kPad || ids[i] == kBos) continue;
    chars.push_back(vocab.char_of(ids[i]));
  }
  return u32_to_utf8(chars);
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
    case Split::oracle_train: return "oracle_train";
  }
  return "unknown";
}

CorpusMetadata read_metadata(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open corpus metadata " + path.string());
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("malformed metadata " + path.string() + ": " + e.what(), 0);
  }
  CorpusMetadata meta;
  try {
    meta.num_classes = doc.at("num_classes").get<std::size_t>();
    if (doc.contains("class_names")) meta.class_names = doc["class_names"].get<std::vector<std::string>>();
    if (doc.contains("alphabet")) meta.alphabet = doc["alphabet"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("invalid metadata " + path.string() + ": " + e.what(), 0);
  }
  if (meta.num_classes < 2) throw ValidationError("metadata declares fewer than 2 classes");
  if (!meta.class_names.empty() && meta.class_names.size() != meta.num_classes) {
    throw ValidationError("metadata class_names does not match num_classes");
  }
  return meta;
}

void write_metadata(const std::filesystem::path& path, const CorpusMetadata& meta) {
  nlohmann::json doc;
  doc["num_classes"] = meta.num_classes;
  doc["class_names"] = meta.class_names;
  if (!meta.alphabet.empty()) doc["alphabet"] = meta.alphabet;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

std::vector<RawExample> read_jsonl(const std::filesystem::path& path, std::size_t num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open corpus file " + path.string());
  std::vector<RawExample> examples;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw ParseError(path.string() + ":" + std::to_string(line_number) + ": empty line",
                       line_number);
    }
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_number) + ": " + e.what(),
                       line_number);
    }
    const bool well_formed = obj.is_object() && obj.size() == 2 && obj.contains("text") &&
                             obj.contains("label") && obj["text"].is_string() &&
                             obj["label"].is_number_integer() && obj["label"].get<std::int64_t>() >= 0;
    if (!well_formed) {
      throw ParseError(path.string() + ":" + std::to_string(line_number) +
                           ": expected exactly {\"text\": string, \"label\": non-negative integer}",
                       line_number);
    }
    RawExample example{obj["text"].get<std::string>(), obj["label"].get<std::size_t>()};
    if (example.label >= num_classes) {
      throw ValidationError(path.string() + ":" + std::to_string(line_number) + ": label " +
                            std::to_string(example.label) + " >= num_classes " +
                            std::to_string(num_classes));
    }
    examples.push_back(std::move(example));
  }
  if (examples.empty()) throw IngestionError("corpus file " + path.string() + " is empty");
  return examples;
}

LabeledCorpus load_corpus(const std::filesystem::path& path, const Vocabulary& vocab,
                          std::size_t num_classes, Split split) {
  if (num_classes < 2) throw ValidationError("a labeled corpus needs at least 2 classes");
  LabeledCorpus corpus;
  corpus.num_classes = num_classes;
  corpus.split = split;
  for (auto& raw : read_jsonl(path, num_classes)) {
    TokenSequence tokens = encode(vocab, raw.text);
    if (tokens.size() > kMaxSequenceLength) tokens.resize(kMaxSequenceLength);
    if (tokens.size() < 2) {
      throw ValidationError(path.string() + ": example with empty text");
    }
    corpus.examples.push_back({std::move(tokens), raw.label});
  }
  if (split == Split::train) {
    std::vector<bool> seen(num_classes, false);
    for (const auto& e : corpus.examples) seen[e.label] = true;
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw ValidationError(path.string() + ": not every class occurs in the train split");
    }
  }
  return corpus;
}

LabeledCorpus load_corpus(const std::filesystem::path& path, Split split) {
  const CorpusMetadata meta = read_metadata(path.parent_path() / kMetadataFileName);
  Vocabulary vocab;
  if (!meta.alphabet.empty()) {
    vocab = Vocabulary::build(meta.alphabet);
  } else {
    std::string all;
    for (const auto& raw : read_jsonl(path, meta.num_classes)) all += raw.text;
    vocab = Vocabulary::build(all);
  }
  return load_corpus(path, vocab, meta.num_classes, split);
}

const LabeledCorpus& Dataset::split(Split which) const {
  switch (which) {
    case Split::train: return train;
    case Split::validation: return validation;
    case Split::test: return test;
    case Split::oracle_train: return oracle_train;
  }
  return train;
}

std::filesystem::path split_path(const std::filesystem::path& dir, Split split) {
  return dir / (std::string(split_name(split)) + ".jsonl");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.metadata = read_metadata(dir / kMetadataFileName);
  constexpr Split kSplits[] = {Split::train, Split::validation, Split::test, Split::oracle_train};
  if (!ds.metadata.alphabet.empty()) {
    ds.vocab = Vocabulary::build(ds.metadata.alphabet);
  } else {
    std::string all;
    for (Split s : kSplits) {
      for (const auto& raw : read_jsonl(split_path(dir, s), ds.metadata.num_classes)) all += raw.text;
    }
    ds.vocab = Vocabulary::build(all);
  }
  ds.train = load_corpus(split_path(dir, Split::train), ds.vocab, ds.metadata.num_classes, Split::train);
  ds.validation = load_corpus(split_path(dir, Split::validation), ds.vocab, ds.metadata.num_classes,
                              Split::validation);
  ds.test = load_corpus(split_path(dir, Split::test), ds.vocab, ds.metadata.num_classes, Split::test);
  ds.oracle_train = load_corpus(split_path(dir, Split::oracle_train), ds.vocab,
                                ds.metadata.num_classes, Split::oracle_train);
  return ds;
}

LabeledExample sample_training_prefix(const LabeledExample& example, Rng& rng) {
  if (example.tokens.size() < 2) throw ValidationError("prefix sampling needs at least one content token");
  const std::size_t content = example.tokens.size() - 1;
  const std::size_t k = 1 + uniform_index(rng, content);
  return {TokenSequence(example.tokens.begin(), example.tokens.begin() + static_cast<std::ptrdiff_t>(k + 1)),
          example.label};
}

}  // namespace coopgen
