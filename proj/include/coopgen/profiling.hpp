// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0
//
// Per-step cost curves of guided decoding and forward-pass accounting of
// generative versus per-candidate guidance. Counters are exact and
// machine-independent; wall time is recorded for reference only.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "coopgen/cost.hpp"
#include "coopgen/discriminators.hpp"
#include "coopgen/evaluation.hpp"
#include "coopgen/mcts.hpp"

namespace coopgen {

/// Discriminator cost of decode step `step`, averaged over the `sequences`
/// generations that reached it.
struct StepCostRecord {
  std::size_t step = 0;
  std::string family;
  double forward_passes = 0.0;
  double attention_scores = 0.0;
  double tokens_scored = 0.0;
  double wall_seconds = 0.0;
  double c_puct = 0.0;
  std::size_t iterations = 0;
  std::size_t sequences = 0;

  bool operator==(const StepCostRecord&) const = default;
};

struct ProfileRun {
  std::vector<StepCostRecord> records;
  std::vector<GenerationResult> generations;
  CostCounters discriminator_total;  // prompt encoding included
  CostCounters discriminator_setup;  // prompt encoding only
  CostCounters lm_total;
};

/// Family tag used in cost tables: family_name() of the discriminator, or
/// "none" without one.
std::string family_tag(const Discriminator* discriminator);

/// Generates num_batches * batch_size sequences. Sequence i targets class
/// i mod C and starts from a prompt drawn from `prompts` with a generator
/// seeded by `seed` ({BOS} when `prompts` is empty). Errors as generate_batch.
ProfileRun profile_generation(const LanguageModel& lm, const Discriminator* discriminator,
                              const SearchParams& params, std::span<const TokenSequence> prompts,
                              std::size_t num_batches, std::size_t batch_size, std::uint64_t seed,
                              std::size_t threads = 1);

/// Coefficient of determination of the least-squares polynomial of `degree`
/// through (x, y). ValidationError when there are no more points than
/// coefficients or the sizes differ; 1 when y is constant and fitted exactly.
double polynomial_fit_r_squared(std::span<const double> x, std::span<const double> y, std::size_t degree);

struct AccountingRow {
  double c_puct = 0.0;
  std::string family;
  double forward_passes = 0.0;    // discriminator passes per sequence
  double attention_scores = 0.0;  // discriminator attention scores per sequence
  double width = 0.0;             // mean distinct children evaluated per scored parent
  double parents_scored = 0.0;    // per sequence
  double evaluated_children = 0.0;  // per sequence
};

/// For every c_puct in `sweep` and each discriminator, profiles the same
/// prompts and targets and reports per-sequence totals.
std::vector<AccountingRow> forward_pass_accounting(const LanguageModel& lm,
                                                   std::span<const Discriminator* const> discriminators,
                                                   const SearchParams& params, std::span<const double> sweep,
                                                   std::span<const TokenSequence> prompts, std::size_t sequences,
                                                   std::uint64_t seed, std::size_t threads = 1);

/// Header step,family,forward_passes,attention_scores,wall_seconds,c_puct,iterations.
/// ValidationError on no records, IoError when the file cannot be written.
void emit_cost_csv(std::span<const StepCostRecord> records, const std::filesystem::path& path);
/// Reads a file written by emit_cost_csv. tokens_scored and sequences are not
/// part of the format and come back as 0. DataError on malformed input.
std::vector<StepCostRecord> parse_cost_csv(const std::filesystem::path& path);

void write_accounting_csv(std::span<const AccountingRow> rows, const std::filesystem::path& path);

struct FamilyCurve {
  std::string family;
  std::vector<CurvePoint> points;
};

/// Plot data written by write_plot_data; empty parts are skipped.
struct PlotData {
  std::vector<FamilyCurve> accuracy_curves;  // fig1_accuracy_vs_length.csv
  std::vector<StepCostRecord> step_costs;    // fig2_step_cost.csv
  std::vector<EvalReport> quality;           // table1_quality.csv
};

std::vector<std::filesystem::path> write_plot_data(const std::filesystem::path& dir, const PlotData& data);

}  // namespace coopgen
