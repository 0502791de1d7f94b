// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0
//
// Class posteriors p(c | x) for partial sequences, from three families:
// a bidirectional classifier (full recompute), a causal classifier (cached
// keys/values, one incremental step per token) and a class-conditional LM
// used through Bayes' rule.

#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "coopgen/cost.hpp"
#include "coopgen/model.hpp"

namespace coopgen {

enum class Family { bidirectional, unidirectional, generative };

std::string_view family_name(Family family);
/// Accepts "bi"/"bidirectional", "uni"/"unidirectional", "gedi"/"generative".
Family parse_family(std::string_view name);

struct ClassPosterior {
  std::vector<double> probs;

  std::size_t argmax() const;
};

/// Family-specific encoding of a scored sequence. Immutable and shareable
/// between search-tree nodes.
class DiscContext {
 public:
  virtual ~DiscContext() = default;
  const TokenSequence& tokens() const { return tokens_; }

 protected:
  explicit DiscContext(TokenSequence tokens) : tokens_(std::move(tokens)) {}

 private:
  TokenSequence tokens_;
};

using DiscContextPtr = std::shared_ptr<const DiscContext>;

struct ChildScores {
  std::vector<TokenId> tokens;
  std::vector<ClassPosterior> posteriors;  // parallel to tokens
  std::vector<DiscContextPtr> contexts;    // context of each extended sequence
  CostCounters cost;
};

class Discriminator {
 public:
  virtual ~Discriminator() = default;

  virtual Family family() const = 0;
  virtual std::size_t num_classes() const = 0;
  /// Size of the shared character vocabulary (control tokens excluded).
  virtual std::size_t vocab_size() const = 0;
  virtual const std::string& alphabet() const = 0;

  /// Encodes a BOS-initial sequence so that its continuations can be scored.
  virtual DiscContextPtr encode(std::span<const TokenId> tokens, CostCounters* counters = nullptr) const = 0;
  /// Posterior of the encoded sequence itself. Never runs a model.
  virtual ClassPosterior posterior(const DiscContext& context) const = 0;
  /// Posterior of context·v for every candidate v. ValidationError when a
  /// candidate is outside the vocabulary.
  virtual ChildScores score_children(const DiscContext& context, std::span<const TokenId> candidates) const = 0;

  /// Convenience: encode + posterior.
  ClassPosterior classify(std::span<const TokenId> tokens, CostCounters* counters = nullptr) const;

 protected:
  void check_candidates(std::span<const TokenId> candidates) const;
};

/// Bidirectional classifier head. One full forward per scored sequence.
class BidirectionalDiscriminator final : public Discriminator {
 public:
  explicit BidirectionalDiscriminator(std::shared_ptr<const Model> model);

  Family family() const override { return Family::bidirectional; }
  std::size_t num_classes() const override { return model_->config().num_classes; }
  std::size_t vocab_size() const override { return model_->config().vocab_size; }
  const std::string& alphabet() const override { return model_->config().alphabet; }
  DiscContextPtr encode(std::span<const TokenId> tokens, CostCounters* counters = nullptr) const override;
  ClassPosterior posterior(const DiscContext& context) const override;
  ChildScores score_children(const DiscContext& context, std::span<const TokenId> candidates) const override;

 private:
  std::shared_ptr<const Model> model_;
};

/// Causal classifier head with cached keys/values.
class UnidirectionalDiscriminator final : public Discriminator {
 public:
  explicit UnidirectionalDiscriminator(std::shared_ptr<const Model> model);

  Family family() const override { return Family::unidirectional; }
  std::size_t num_classes() const override { return model_->config().num_classes; }
  std::size_t vocab_size() const override { return model_->config().vocab_size; }
  const std::string& alphabet() const override { return model_->config().alphabet; }
  DiscContextPtr encode(std::span<const TokenId> tokens, CostCounters* counters = nullptr) const override;
  ClassPosterior posterior(const DiscContext& context) const override;
  ChildScores score_children(const DiscContext& context, std::span<const TokenId> candidates) const override;

 private:
  std::shared_ptr<const Model> model_;
};

/// Class-conditional LM used as a classifier: p(c | x) ∝ prior(c) p(x | c).
///
/// A context keeps, per class, the cache up to the second-to-last consumed
/// token, the still-unconsumed last token and the running log-likelihood
/// including that last token. Consuming it costs one incremental step per
/// class and yields next-token distributions over the whole vocabulary, so
/// all children of a context are scored with exactly |C| forwards.
class GenerativeDiscriminator final : public Discriminator {
 public:
  /// `log_prior` is added to the class log-likelihoods; empty means uniform.
  explicit GenerativeDiscriminator(std::shared_ptr<const Model> cclm, std::vector<double> log_prior = {});

  Family family() const override { return Family::generative; }
  std::size_t num_classes() const override { return model_->config().num_classes; }
  std::size_t vocab_size() const override { return model_->config().base_vocab_size(); }
  const std::string& alphabet() const override { return model_->config().alphabet; }
  DiscContextPtr encode(std::span<const TokenId> tokens, CostCounters* counters = nullptr) const override;
  ClassPosterior posterior(const DiscContext& context) const override;
  ChildScores score_children(const DiscContext& context, std::span<const TokenId> candidates) const override;

 private:
  std::shared_ptr<const Model> model_;
  std::vector<double> log_prior_;
};

/// Softmax of class logits from one full forward of a bidirectional classifier.
ClassPosterior score_sequence_bidirectional(const Model& classifier, std::span<const TokenId> tokens,
                                            CostCounters* counters = nullptr);

/// Extends a causal classifier's cache by one token and returns the posterior
/// of the extended sequence.
ClassPosterior score_sequence_unidirectional(const Model& classifier, IncrementalState& state, TokenId new_token,
                                             CostCounters* counters = nullptr);

/// Eager per-class bookkeeping for sequential Bayes scoring with a CC-LM.
struct GediSequentialState {
  std::vector<IncrementalState> states;            // one per class, all equal length
  std::vector<std::vector<double>> next_log_probs;  // per class, after the last fed token
  std::vector<double> log_likelihood;              // per class, sum over consumed content tokens
};

/// Feeds BOS and each class's control token.
GediSequentialState gedi_initial_state(const Model& cclm, CostCounters* counters = nullptr);

/// Adds log p(new_token | prefix, c) to every class and advances each cache
/// with exactly one incremental forward per class. StateError when the
/// per-class caches have different lengths.
ClassPosterior gedi_class_posterior(const Model& cclm, GediSequentialState& state, TokenId new_token,
                                    CostCounters* counters = nullptr);

/// softmax(log_likelihood + log_prior); an empty prior is uniform.
ClassPosterior bayes_posterior(std::span<const double> log_likelihood, std::span<const double> log_prior = {});

/// Control-token id of class c in a class-conditional LM.
TokenId control_token(const ModelConfig& config, std::size_t class_index);

/// Builds the discriminator matching the checkpoint kind: bidirectional or
/// causal classifier, or class-conditional LM.
std::unique_ptr<Discriminator> make_discriminator(std::shared_ptr<const Model> model);

}  // namespace coopgen
