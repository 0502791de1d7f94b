// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0
//
// Seeded template generators for the bundled corpora: polarity2 (review-like
// sentences, 2 classes) and topic4 (news-like headlines, 4 classes). Every
// opener is shared by all classes, so short prefixes carry no label signal.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "coopgen/data.hpp"

namespace coopgen {

enum class SyntheticKind { polarity2, topic4 };

/// ValidationError for names other than "polarity2" and "topic4".
SyntheticKind parse_synthetic_kind(std::string_view name);
std::string_view synthetic_name(SyntheticKind kind);

struct SplitSizes {
  std::size_t train = 4000;
  std::size_t validation = 300;
  std::size_t test = 300;
  std::size_t oracle_train = 2000;

  std::size_t total() const { return train + validation + test + oracle_train; }
};

struct SyntheticDataset {
  CorpusMetadata metadata;
  std::array<std::vector<RawExample>, 4> splits;  // indexed by Split

  const std::vector<RawExample>& split(Split s) const { return splits[static_cast<std::size_t>(s)]; }
};

/// Distinct texts across all splits, labels balanced round-robin within each
/// split. ValidationError when the templates cannot supply enough texts.
SyntheticDataset make_synthetic(SyntheticKind kind, std::uint64_t seed, const SplitSizes& sizes = {});

/// meta.json plus one JSONL file per split, loadable with load_dataset.
void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& dataset);

}  // namespace coopgen
