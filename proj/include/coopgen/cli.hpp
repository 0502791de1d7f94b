// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0
//
// Subcommands of the coopgen tool as library calls, plus the argument-parsing
// entry point. A RunConfig is read from a JSON file; command-line flags
// override individual fields.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "coopgen/evaluation.hpp"
#include "coopgen/mcts.hpp"
#include "coopgen/model.hpp"
#include "coopgen/profiling.hpp"
#include "coopgen/synthetic.hpp"
#include "coopgen/training.hpp"

namespace coopgen {

/// Falls back to this directory when neither the config nor a flag names one.
inline constexpr const char* kOutputDirEnv = "COOPGEN_OUTPUT_DIR";

enum class ModelKind { lm, disc_bi, disc_uni, cclm, oracle_lm, oracle_disc };

inline constexpr ModelKind kAllModelKinds[] = {ModelKind::lm,   ModelKind::disc_bi,   ModelKind::disc_uni,
                                               ModelKind::cclm, ModelKind::oracle_lm, ModelKind::oracle_disc};

std::string_view model_kind_name(ModelKind kind);
/// ValidationError on an unknown name.
ModelKind parse_model_kind(std::string_view name);

struct GenerationSettings {
  std::size_t samples_per_class = 100;
  std::size_t prompt_max_length = 6;  // prompts are 1..this many leading test-text characters; 0 = BOS only
  std::size_t threads = 1;
};

struct BenchSettings {
  std::vector<std::string> families{"bi", "uni", "gedi"};
  std::size_t num_batches = 10;
  std::size_t batch_size = 30;
  std::size_t max_steps = 0;  // 0 = until EOS / max_length
  bool allow_eos = false;     // cost curves need every sequence to reach the same depth
  std::vector<double> c_puct_sweep{1.0, 3.0, 6.0, 10.0, 15.0};
  std::size_t accounting_sequences = 20;
  std::vector<std::size_t> probe_lengths;  // empty = 1..longest test text
  std::size_t threads = 1;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path data_dir;
  std::filesystem::path output_dir;
  ModelConfig backbone;  // layers, hidden size and heads; vocabulary and heads are set per model kind
  TrainConfig train;
  std::vector<std::pair<ModelKind, TrainConfig>> train_overrides;
  SearchParams search;
  GenerationSettings generation;
  BenchSettings bench;

  /// Effective training settings for `kind`, seed derived from `seed`.
  TrainConfig train_config(ModelKind kind) const;
  std::filesystem::path checkpoint_path(ModelKind kind) const;
  std::filesystem::path metrics_path(ModelKind kind) const;

  std::string to_json() const;
  /// Missing keys keep their defaults. ParseError on malformed JSON,
  /// ValidationError on unknown keys or values of the wrong type.
  static RunConfig from_json(std::string_view text);
};

/// ConfigurationError when the file is missing.
RunConfig load_run_config(const std::filesystem::path& path);

/// Distinct BOS-initial prefixes of 1..max_length characters of the test
/// texts, sorted. Empty when max_length is 0.
std::vector<TokenSequence> prompt_pool(const LabeledCorpus& test, std::size_t max_length);

std::filesystem::path cmd_make_data(std::string_view spec, std::uint64_t seed, const std::filesystem::path& out_dir,
                                    const SplitSizes& sizes = {});

struct TrainOutput {
  std::filesystem::path checkpoint;
  std::filesystem::path metrics;
  std::vector<EpochMetrics> metrics_rows;
};

TrainOutput cmd_train(const RunConfig& config, ModelKind kind, const EpochCallback& on_epoch = {});

struct GenerateOptions {
  std::optional<std::size_t> target_class;  // unset: classes in rotation
  std::string family = "bi";                // bi, uni, gedi or none
  std::size_t n = 0;
  std::filesystem::path out;  // default: <output_dir>/samples/<family>.jsonl
};

struct GenerateOutput {
  std::filesystem::path path;
  std::vector<GenerationResult> generations;
};

/// JSONL: one header object {"header": {...}}, then one {text, target_class,
/// family, seed} object per sample. ConfigurationError naming the path when
/// a needed checkpoint is missing.
GenerateOutput cmd_generate(const RunConfig& config, const GenerateOptions& options);

/// Samples of a file written by cmd_generate, with its family tag.
struct SampleFile {
  std::string family;
  SampleSet samples;
};

SampleFile read_sample_file(const std::filesystem::path& path);

struct Comparison {
  std::string label;
  std::string baseline;
  WelchResult welch;
};

struct EvaluateOutput {
  std::vector<EvalReport> reports;
  std::vector<Comparison> comparisons;  // every file against the "none" file, when present
  std::vector<std::filesystem::path> files;
};

/// Judges every sample file with the oracle checkpoints; writes
/// table1_quality.csv and evaluate_summary.json into `out_dir`.
EvaluateOutput cmd_evaluate(const RunConfig& config, const std::vector<std::filesystem::path>& sample_files,
                            const std::filesystem::path& out_dir);

struct BenchOutput {
  PlotData plots;
  std::vector<AccountingRow> accounting;
  std::vector<std::filesystem::path> files;
};

/// Accuracy-vs-length curves, per-step cost curves and the c_puct sweep for
/// bench.families; writes the per-figure CSVs, accounting.csv and
/// bench_summary.json into `out_dir`.
BenchOutput cmd_bench(const RunConfig& config, const std::filesystem::path& out_dir);

/// Exit codes of run_cli.
enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitRuntime = 3 };

/// Parses `args` (program name first) and runs the subcommand.
int run_cli(const std::vector<std::string>& args);

}  // namespace coopgen
