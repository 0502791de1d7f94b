// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include "coopgen/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <unordered_set>

#include "coopgen/errors.hpp"
#include "coopgen/rng.hpp"
#include "json.hpp"

namespace coopgen {
namespace {

using Words = std::vector<std::string_view>;

std::string_view pick(const Words& words, Rng& rng) { return words[uniform_index(rng, words.size())]; }

// Openers, verbs and intensifiers are class-independent; the adjective and
// the closing clause both carry the label.
const Words kReviewOpeners{"the food", "this film", "my phone", "the hotel", "this book", "the staff",
                           "the tour", "our car",   "the show", "this game", "the cafe",  "my bike"};
const Words kReviewVerbs{"was", "is", "felt", "seemed"};
const Words kIntensifiers{"", "really ", "very ", "quite ", "truly ", "so "};
const std::array<Words, 2> kAdjectives{
    Words{"awful", "terrible", "horrible", "dreadful", "poor", "boring", "disappointing", "lousy"},
    Words{"great", "wonderful", "excellent", "lovely", "amazing", "superb", "delightful", "fantastic"}};
const std::array<Words, 2> kReviewTails{
    Words{" and i hated it", ", avoid it", ", never again", " and a waste", ", a real letdown", " and i sighed"},
    Words{" and i loved it", ", highly recommend", ", would buy again", " and worth it", ", a real joy", " and i smiled"}};

std::string polarity_text(std::size_t label, Rng& rng) {
  std::string text(pick(kReviewOpeners, rng));
  text += ' ';
  text += pick(kReviewVerbs, rng);
  text += ' ';
  text += pick(kIntensifiers, rng);
  text += pick(kAdjectives[label], rng);
  text += pick(kReviewTails[label], rng);
  text += '.';
  return text;
}

const Words kNewsOpeners{"", "today ", "breaking: ", "reports say ", "this week ", "sources say ", "update: ", "late news: "};
const std::array<Words, 4> kNewsSubjects{
    Words{"the president", "officials", "the embassy", "rebels", "the minister", "the army"},
    Words{"the team", "the striker", "the coach", "our club", "the champion", "the keeper"},
    Words{"the bank", "shares", "the startup", "investors", "the retailer", "the ceo"},
    Words{"researchers", "the telescope", "a new study", "the lab", "engineers", "the rover"}};
const std::array<Words, 4> kNewsEvents{
    Words{"signed a peace deal", "held talks abroad", "won the election", "closed the border", "met the envoy",
          "called for a ceasefire"},
    Words{"won the final", "signed a new player", "lost the derby", "scored twice", "set a record", "beat the league leaders"},
    Words{"raised prices", "posted record profits", "cut jobs", "went public", "missed forecasts", "bought a rival"},
    Words{"found a new planet", "mapped the genome", "built a faster chip", "tested a vaccine", "detected gravity waves",
          "launched a probe"}};
const Words kNewsTails{"", " on monday", " again", " late", " overnight", " at last", " on friday", " this year",
                       " once more", " quietly"};

std::string topic_text(std::size_t label, Rng& rng) {
  std::string text(pick(kNewsOpeners, rng));
  text += pick(kNewsSubjects[label], rng);
  text += ' ';
  text += pick(kNewsEvents[label], rng);
  text += pick(kNewsTails, rng);
  return text;
}

}  // namespace

SyntheticKind parse_synthetic_kind(std::string_view name) {
  if (name == "polarity2") return SyntheticKind::polarity2;
  if (name == "topic4") return SyntheticKind::topic4;
  throw ValidationError("unknown synthetic corpus '" + std::string(name) + "' (expected polarity2 or topic4)");
}

std::string_view synthetic_name(SyntheticKind kind) {
  return kind == SyntheticKind::polarity2 ? "polarity2" : "topic4";
}

SyntheticDataset make_synthetic(SyntheticKind kind, std::uint64_t seed, const SplitSizes& sizes) {
  SyntheticDataset ds;
  const bool polarity = kind == SyntheticKind::polarity2;
  ds.metadata.num_classes = polarity ? 2 : 4;
  ds.metadata.class_names = polarity ? std::vector<std::string>{"negative", "positive"}
                                     : std::vector<std::string>{"world", "sports", "business", "science"};
  Rng rng(mix_seed(seed, 0));
  std::unordered_set<std::string> seen;
  const std::array<std::size_t, 4> counts{sizes.train, sizes.validation, sizes.test, sizes.oracle_train};
  const std::size_t max_attempts = 50 * sizes.total() + 1000;
  std::size_t attempts = 0;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    auto& split = ds.splits[s];
    split.reserve(counts[s]);
    while (split.size() < counts[s]) {
      if (++attempts > max_attempts) throw ValidationError("templates cannot supply enough distinct texts");
      const std::size_t label = split.size() % ds.metadata.num_classes;
      std::string text = polarity ? polarity_text(label, rng) : topic_text(label, rng);
      if (seen.insert(text).second) split.push_back({std::move(text), label});
    }
  }
  std::set<char> chars;
  for (const auto& text : seen) chars.insert(text.begin(), text.end());
  ds.metadata.alphabet.assign(chars.begin(), chars.end());
  return ds;
}

void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& dataset) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_metadata(dir / kMetadataFileName, dataset.metadata);
  for (const Split s : {Split::train, Split::validation, Split::test, Split::oracle_train}) {
    const auto path = split_path(dir, s);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& ex : dataset.split(s)) {
      out << nlohmann::json{{"text", ex.text}, {"label", ex.label}}.dump() << '\n';
    }
    if (!out) throw IoError("failed writing " + path.string());
  }
}

}  // namespace coopgen
