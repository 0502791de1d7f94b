// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0
//
// Sample-quality and discriminator measurements: accuracy against prefix
// length, oracle-judged accuracy, Self-BLEU, oracle perplexity and Welch's
// t-test.

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "coopgen/data.hpp"
#include "coopgen/discriminators.hpp"
#include "coopgen/mcts.hpp"

namespace coopgen {

struct CurvePoint {
  std::size_t length = 0;
  double accuracy = 0.0;  // percent
};

/// Accuracy of `discriminator` on every example truncated to min(length, T)
/// content tokens. `lengths` must be strictly ascending and positive.
/// ValidationError on an empty corpus or bad lengths.
std::vector<CurvePoint> accuracy_vs_length(const Discriminator& discriminator, const LabeledCorpus& corpus,
                                           std::span<const std::size_t> lengths);

/// CSV with header length,accuracy.
void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve);

struct Sample {
  TokenSequence tokens;  // BOS-initial; a trailing EOS is ignored
  std::size_t target_class = 0;
};

/// Generated samples together with the alphabet their token ids refer to.
struct SampleSet {
  std::string alphabet;
  std::vector<Sample> samples;
};

/// Content tokens of a sample: leading BOS and trailing EOS removed.
std::vector<TokenId> content_tokens(const Sample& sample);

struct OracleJudgement {
  double accuracy = 0.0;                           // percent
  std::vector<std::optional<double>> per_class;    // percent; empty when no sample targets the class
  std::vector<double> target_probability;          // oracle p(target | x) per sample
  std::vector<bool> correct;                       // oracle argmax == target per sample
};

/// ConfigurationError when the alphabets differ or a target class is out of
/// range; ValidationError on an empty sample set.
OracleJudgement oracle_judge(const SampleSet& samples, const Discriminator& oracle);
double oracle_accuracy(const SampleSet& samples, const Discriminator& oracle);

/// Mean BLEU (orders 1..max_n, uniform weights, closest-reference brevity
/// penalty, no smoothing) of each sequence against all the others.
/// ValidationError for fewer than two sequences or max_n == 0.
double self_bleu(std::span<const std::vector<TokenId>> sequences, std::size_t max_n = 5);
double self_bleu(const SampleSet& samples, std::size_t max_n = 5);

/// exp of the mean NLL over every content token plus EOS, pooled across
/// samples. ConfigurationError on an alphabet mismatch, ValidationError when
/// there are no samples.
double oracle_perplexity(const SampleSet& samples, const LanguageModel& oracle_lm);

struct WelchResult {
  double t = 0.0;
  double degrees_of_freedom = 0.0;
  double p_value = 1.0;  // two-sided
};

/// ValidationError when a group has fewer than two values; UndefinedTestError
/// when both groups have zero variance.
WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

struct EvalReport {
  std::string label;  // e.g. family tag of the evaluated sample file
  double accuracy = 0.0;
  std::vector<std::optional<double>> per_class_accuracy;
  std::optional<double> self_bleu_5;  // needs at least two samples
  double oracle_perplexity = 0.0;
  std::size_t sample_count = 0;
  std::vector<std::pair<std::string, std::string>> settings;

  std::string to_json() const;
  /// Fixed columns, then one accuracy column per class.
  std::string csv_header() const;
  std::string csv_row() const;
};

EvalReport evaluate_samples(const SampleSet& samples, const Discriminator& oracle, const LanguageModel& oracle_lm,
                            std::string label = {});

}  // namespace coopgen
