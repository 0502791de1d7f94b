// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0
//
// PUCT Monte-Carlo tree search decoding. The language model supplies priors
// at expansion; the discriminator's posterior for the target class replaces
// rollouts as the leaf value.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coopgen/cost.hpp"
#include "coopgen/data.hpp"
#include "coopgen/discriminators.hpp"
#include "coopgen/model.hpp"

namespace coopgen {

/// Language-model state after consuming `tokens`.
struct LmContext {
  TokenSequence tokens;
  std::vector<double> next_logits;  // distribution over the token after `tokens`
  double log_likelihood = 0.0;      // sum of log p(x_i | x_<i) for i >= 1
  IncrementalState state;           // used by transformer-backed models only
};

using LmContextPtr = std::shared_ptr<const LmContext>;

class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::size_t vocab_size() const = 0;
  virtual const std::string& alphabet() const = 0;
  virtual std::size_t max_positions() const = 0;

  /// Consumes a BOS-initial sequence.
  LmContextPtr start(std::span<const TokenId> tokens, CostCounters* counters = nullptr) const;
  /// One-token extension; the parent context is left untouched.
  LmContextPtr extend(const LmContext& parent, TokenId token, CostCounters* counters = nullptr) const;

 protected:
  /// `context.tokens` already ends with `token`; advance `context.state` and
  /// return the logits for the next position.
  virtual std::vector<double> advance(LmContext& context, TokenId token, CostCounters* counters) const = 0;
};

/// Causal transformer LM with a key/value cache.
class TransformerLm final : public LanguageModel {
 public:
  explicit TransformerLm(std::shared_ptr<const Model> model);

  std::size_t vocab_size() const override { return model_->config().vocab_size; }
  const std::string& alphabet() const override { return model_->config().alphabet; }
  std::size_t max_positions() const override { return model_->config().max_positions; }
  const Model& model() const { return *model_; }

 protected:
  std::vector<double> advance(LmContext& context, TokenId token, CostCounters* counters) const override;

 private:
  std::shared_ptr<const Model> model_;
};

enum class ValueSource { discriminator, lm_likelihood };

struct SearchParams {
  double c_puct = 3.0;
  double tau = 1.0;
  std::size_t iterations_per_token = 50;
  std::size_t max_length = 48;  // content tokens (BOS excluded, EOS included)
  std::size_t target_class = 0;
  ValueSource value_source = ValueSource::discriminator;
  bool allow_eos = true;
  bool reuse_subtree = true;
  bool max_backup = false;       // back up the max leaf value instead of the mean
  double mixing_exponent = 0.0;  // value = p(c|x) * lm_value^exponent
  std::size_t max_steps = 0;     // stop after this many decode steps; 0 = until EOS / max_length

  /// ParameterError on out-of-range fields.
  void validate() const;
};

struct SearchNode {
  TokenId token = kBos;
  double prior = 1.0;
  std::uint64_t visits = 0;
  double total_value = 0.0;
  double max_value = 0.0;
  std::uint64_t self_evaluations = 0;  // times this node was the evaluated leaf
  std::size_t length = 1;              // tokens including BOS
  double log_likelihood = 0.0;         // LM log-likelihood of the node's sequence
  bool terminal = false;

  std::optional<double> value;  // leaf value, cached once computed
  std::optional<ClassPosterior> posterior;
  DiscContextPtr disc;
  LmContextPtr lm;          // set once expanded
  bool children_scored = false;  // all children scored in one call (generative family)
  std::size_t evaluated_children = 0;
  std::vector<std::unique_ptr<SearchNode>> children;  // ascending token id

  bool expanded() const { return lm != nullptr; }
  double mean_value() const { return visits == 0 ? 0.0 : total_value / static_cast<double>(visits); }
};

/// Q(child) + c_puct * P(child) * sqrt(N(parent)) / (1 + N(child)), Q = 0 when unvisited.
double puct_score(const SearchNode& parent, const SearchNode& child, double c_puct, bool max_backup = false);

struct SearchStats {
  CostCounters discriminator;
  CostCounters lm;
  std::size_t parents_scored = 0;     // nodes with at least one evaluated child
  std::size_t evaluated_children = 0;  // first-time leaf evaluations

  SearchStats& operator+=(const SearchStats& other);
  /// Mean distinct children explored per parent.
  double width() const;
};

struct SearchTree {
  std::unique_ptr<SearchNode> root;
  SearchStats stats;
  std::vector<std::vector<TokenId>> trace;  // selected path (tokens below root) per iteration
  bool record_trace = false;
};

/// Fresh tree for `prompt`; the root is expanded with LM priors and encoded
/// by the discriminator. `discriminator` may be null with the lm_likelihood
/// value source.
SearchTree make_tree(std::span<const TokenId> prompt, const LanguageModel& lm, const Discriminator* discriminator,
                     const SearchParams& params);

/// Select, evaluate and expand one leaf, then back its value up to the root.
void run_iteration(SearchTree& tree, const LanguageModel& lm, const Discriminator* discriminator,
                   const SearchParams& params);

struct DecodeResult {
  TokenId token = kPad;
  std::unique_ptr<SearchNode> subtree;  // the chosen child, ready to become the next root
};

/// Runs iterations_per_token iterations and picks the most-visited root child
/// (ties: higher mean value, then lower token id).
DecodeResult decode_step(SearchTree& tree, const LanguageModel& lm, const Discriminator* discriminator,
                         const SearchParams& params);

/// Recreates `source` from its tokens with fresh model calls and copies every
/// node's statistics over.
SearchTree rebuild_tree(const SearchNode& source, const LanguageModel& lm, const Discriminator* discriminator,
                        const SearchParams& params);

struct StepRecord {
  std::size_t step = 0;
  std::size_t prefix_length = 0;  // tokens (BOS included) before this step's token
  TokenId token = kPad;
  SearchStats stats;
  double wall_seconds = 0.0;
};

struct GenerationResult {
  TokenSequence tokens;
  std::vector<StepRecord> steps;
  SearchStats setup;  // encoding the prompt
  SearchStats total;  // setup plus every step
};

/// Repeats decode_step until EOS, max_length or max_steps. Fully
/// deterministic for fixed models and parameters.
GenerationResult generate(std::span<const TokenId> prompt, const LanguageModel& lm, const Discriminator* discriminator,
                          const SearchParams& params);

struct BatchItem {
  TokenSequence prompt;
  std::size_t target_class = 0;
};

/// Output i equals generate() on item i alone; items run on up to `threads` workers.
std::vector<GenerationResult> generate_batch(std::span<const BatchItem> items, const LanguageModel& lm,
                                             const Discriminator* discriminator, const SearchParams& params,
                                             std::size_t threads = 1);

/// ConfigurationError unless the LM and discriminator share one vocabulary.
void check_compatible(const LanguageModel& lm, const Discriminator* discriminator, const SearchParams& params);

}  // namespace coopgen
