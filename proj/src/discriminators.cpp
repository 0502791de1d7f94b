// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include "coopgen/discriminators.hpp"

#include <algorithm>
#include <string>

#include "coopgen/errors.hpp"
#include "coopgen/numerics.hpp"

namespace coopgen {

namespace {

ClassPosterior posterior_from_logits(std::span<const double> logits) { return {softmax(logits)}; }

void require_bos(std::span<const TokenId> tokens) {
  if (tokens.empty() || tokens.front() != kBos) throw ValidationError("scored sequences must start with BOS");
}

class BidirectionalContext final : public DiscContext {
 public:
  BidirectionalContext(TokenSequence tokens, ClassPosterior posterior)
      : DiscContext(std::move(tokens)), posterior(std::move(posterior)) {}
  ClassPosterior posterior;
};

class UnidirectionalContext final : public DiscContext {
 public:
  UnidirectionalContext(TokenSequence tokens, IncrementalState state, ClassPosterior posterior)
      : DiscContext(std::move(tokens)), state(std::move(state)), posterior(std::move(posterior)) {}
  IncrementalState state;
  ClassPosterior posterior;
};

class GenerativeContext final : public DiscContext {
 public:
  GenerativeContext(TokenSequence tokens, std::vector<IncrementalState> states, std::vector<TokenId> pending,
                    std::vector<double> log_likelihood)
      : DiscContext(std::move(tokens)),
        states(std::move(states)),
        pending(std::move(pending)),
        log_likelihood(std::move(log_likelihood)) {}
  std::vector<IncrementalState> states;  // cover everything before `pending`
  std::vector<TokenId> pending;
  std::vector<double> log_likelihood;  // includes the pending token
};

template <typename T>
const T& context_cast(const DiscContext& context) {
  const auto* typed = dynamic_cast<const T*>(&context);
  if (typed == nullptr) throw ConfigurationError("context was encoded by a different discriminator family");
  return *typed;
}

void require_classifier(const Model& model, MaskMode mask, const char* what) {
  const ModelConfig& cfg = model.config();
  if (cfg.head_kind != HeadKind::classifier || cfg.mask_mode != mask) {
    throw ConfigurationError(std::string(what) + " discriminator needs a " +
                             (mask == MaskMode::causal ? "causal" : "bidirectional") + " classifier checkpoint");
  }
}

void require_cclm(const Model& model) {
  const ModelConfig& cfg = model.config();
  if (cfg.head_kind != HeadKind::lm || !cfg.class_conditional() || cfg.mask_mode != MaskMode::causal) {
    throw ConfigurationError("generative discriminator needs a class-conditional LM checkpoint");
  }
}

}  // namespace

ClassPosterior bayes_posterior(std::span<const double> log_likelihood, std::span<const double> log_prior) {
  std::vector<double> scores(log_likelihood.begin(), log_likelihood.end());
  for (std::size_t c = 0; c < scores.size() && c < log_prior.size(); ++c) scores[c] += log_prior[c];
  return {softmax(scores)};
}

std::string_view family_name(Family family) {
  switch (family) {
    case Family::bidirectional: return "bi";
    case Family::unidirectional: return "uni";
    case Family::generative: return "gedi";
  }
  return "?";
}

Family parse_family(std::string_view name) {
  if (name == "bi" || name == "bidirectional") return Family::bidirectional;
  if (name == "uni" || name == "unidirectional") return Family::unidirectional;
  if (name == "gedi" || name == "generative") return Family::generative;
  throw ParameterError("unknown discriminator family '" + std::string(name) + "'");
}

std::size_t ClassPosterior::argmax() const {
  return static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) - probs.begin());
}

ClassPosterior Discriminator::classify(std::span<const TokenId> tokens, CostCounters* counters) const {
  return posterior(*encode(tokens, counters));
}

void Discriminator::check_candidates(std::span<const TokenId> candidates) const {
  for (TokenId v : candidates) {
    if (v < 0 || static_cast<std::size_t>(v) >= vocab_size()) {
      throw ValidationError("candidate token " + std::to_string(v) + " outside vocabulary of size " +
                            std::to_string(vocab_size()));
    }
  }
}

ClassPosterior score_sequence_bidirectional(const Model& classifier, std::span<const TokenId> tokens,
                                            CostCounters* counters) {
  require_classifier(classifier, MaskMode::bidirectional, "bidirectional");
  const Matrix logits = forward_full(classifier, tokens, counters);
  return posterior_from_logits(logits.row(0));
}

ClassPosterior score_sequence_unidirectional(const Model& classifier, IncrementalState& state, TokenId new_token,
                                             CostCounters* counters) {
  require_classifier(classifier, MaskMode::causal, "unidirectional");
  if (state.length() >= classifier.config().max_positions) {
    throw StateError("classifier state already holds " + std::to_string(state.length()) + " positions");
  }
  return posterior_from_logits(forward_incremental(classifier, state, new_token, counters));
}

BidirectionalDiscriminator::BidirectionalDiscriminator(std::shared_ptr<const Model> model) : model_(std::move(model)) {
  require_classifier(*model_, MaskMode::bidirectional, "bidirectional");
}

DiscContextPtr BidirectionalDiscriminator::encode(std::span<const TokenId> tokens, CostCounters* counters) const {
  require_bos(tokens);
  return std::make_shared<BidirectionalContext>(TokenSequence(tokens.begin(), tokens.end()),
                                                score_sequence_bidirectional(*model_, tokens, counters));
}

ClassPosterior BidirectionalDiscriminator::posterior(const DiscContext& context) const {
  return context_cast<BidirectionalContext>(context).posterior;
}

ChildScores BidirectionalDiscriminator::score_children(const DiscContext& context,
                                                       std::span<const TokenId> candidates) const {
  check_candidates(candidates);
  ChildScores out;
  TokenSequence seq = context.tokens();
  seq.push_back(kPad);
  for (TokenId v : candidates) {
    seq.back() = v;
    ClassPosterior p = score_sequence_bidirectional(*model_, seq, &out.cost);
    out.tokens.push_back(v);
    out.contexts.push_back(std::make_shared<BidirectionalContext>(seq, p));
    out.posteriors.push_back(std::move(p));
  }
  return out;
}

UnidirectionalDiscriminator::UnidirectionalDiscriminator(std::shared_ptr<const Model> model)
    : model_(std::move(model)) {
  require_classifier(*model_, MaskMode::causal, "unidirectional");
}

DiscContextPtr UnidirectionalDiscriminator::encode(std::span<const TokenId> tokens, CostCounters* counters) const {
  require_bos(tokens);
  IncrementalState state;
  ClassPosterior p;
  for (TokenId t : tokens) p = score_sequence_unidirectional(*model_, state, t, counters);
  return std::make_shared<UnidirectionalContext>(TokenSequence(tokens.begin(), tokens.end()), std::move(state),
                                                 std::move(p));
}

ClassPosterior UnidirectionalDiscriminator::posterior(const DiscContext& context) const {
  return context_cast<UnidirectionalContext>(context).posterior;
}

ChildScores UnidirectionalDiscriminator::score_children(const DiscContext& context,
                                                        std::span<const TokenId> candidates) const {
  check_candidates(candidates);
  const auto& parent = context_cast<UnidirectionalContext>(context);
  ChildScores out;
  TokenSequence seq = parent.tokens();
  seq.push_back(kPad);
  for (TokenId v : candidates) {
    IncrementalState state = fork_state(parent.state);
    ClassPosterior p = score_sequence_unidirectional(*model_, state, v, &out.cost);
    seq.back() = v;
    out.tokens.push_back(v);
    out.contexts.push_back(std::make_shared<UnidirectionalContext>(seq, std::move(state), p));
    out.posteriors.push_back(std::move(p));
  }
  return out;
}

TokenId control_token(const ModelConfig& config, std::size_t class_index) {
  if (!config.class_conditional() || class_index >= config.num_control_tokens) {
    throw IndexError("no control token for class " + std::to_string(class_index));
  }
  return static_cast<TokenId>(config.base_vocab_size() + class_index);
}

GenerativeDiscriminator::GenerativeDiscriminator(std::shared_ptr<const Model> cclm, std::vector<double> log_prior)
    : model_(std::move(cclm)), log_prior_(std::move(log_prior)) {
  require_cclm(*model_);
  if (!log_prior_.empty() && log_prior_.size() != model_->config().num_classes) {
    throw ParameterError("log prior needs one entry per class");
  }
}

DiscContextPtr GenerativeDiscriminator::encode(std::span<const TokenId> tokens, CostCounters* counters) const {
  require_bos(tokens);
  const std::size_t classes = num_classes();
  std::vector<IncrementalState> states(classes);
  std::vector<TokenId> pending(classes);
  std::vector<double> loglik(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    const TokenId ctrl = control_token(model_->config(), c);
    forward_incremental(*model_, states[c], kBos, counters);
    if (tokens.size() == 1) {
      pending[c] = ctrl;
      continue;
    }
    std::vector<double> logp = log_softmax(forward_incremental(*model_, states[c], ctrl, counters));
    for (std::size_t i = 1; i + 1 < tokens.size(); ++i) {
      loglik[c] += logp[static_cast<std::size_t>(tokens[i])];
      logp = log_softmax(forward_incremental(*model_, states[c], tokens[i], counters));
    }
    loglik[c] += logp[static_cast<std::size_t>(tokens.back())];
    pending[c] = tokens.back();
  }
  return std::make_shared<GenerativeContext>(TokenSequence(tokens.begin(), tokens.end()), std::move(states),
                                             std::move(pending), std::move(loglik));
}

ClassPosterior GenerativeDiscriminator::posterior(const DiscContext& context) const {
  return bayes_posterior(context_cast<GenerativeContext>(context).log_likelihood, log_prior_);
}

ChildScores GenerativeDiscriminator::score_children(const DiscContext& context,
                                                    std::span<const TokenId> candidates) const {
  check_candidates(candidates);
  ChildScores out;
  if (candidates.empty()) return out;
  const auto& parent = context_cast<GenerativeContext>(context);
  const std::size_t classes = num_classes();
  std::vector<IncrementalState> states(classes);
  std::vector<std::vector<double>> logp(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    states[c] = fork_state(parent.states[c]);
    logp[c] = log_softmax(forward_incremental(*model_, states[c], parent.pending[c], &out.cost));
  }
  TokenSequence seq = parent.tokens();
  seq.push_back(kPad);
  std::vector<double> loglik(classes);
  for (TokenId v : candidates) {
    for (std::size_t c = 0; c < classes; ++c) loglik[c] = parent.log_likelihood[c] + logp[c][static_cast<std::size_t>(v)];
    seq.back() = v;
    out.tokens.push_back(v);
    out.posteriors.push_back(bayes_posterior(loglik, log_prior_));
    out.contexts.push_back(
        std::make_shared<GenerativeContext>(seq, states, std::vector<TokenId>(classes, v), loglik));
  }
  return out;
}

GediSequentialState gedi_initial_state(const Model& cclm, CostCounters* counters) {
  require_cclm(cclm);
  const std::size_t classes = cclm.config().num_classes;
  GediSequentialState s;
  s.states.resize(classes);
  s.next_log_probs.resize(classes);
  s.log_likelihood.assign(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    forward_incremental(cclm, s.states[c], kBos, counters);
    s.next_log_probs[c] = log_softmax(forward_incremental(cclm, s.states[c], control_token(cclm.config(), c), counters));
  }
  return s;
}

ClassPosterior gedi_class_posterior(const Model& cclm, GediSequentialState& state, TokenId new_token,
                                    CostCounters* counters) {
  require_cclm(cclm);
  const std::size_t classes = cclm.config().num_classes;
  if (state.states.size() != classes || state.next_log_probs.size() != classes ||
      state.log_likelihood.size() != classes) {
    throw StateError("sequential state does not hold one entry per class");
  }
  for (const auto& s : state.states) {
    if (s.length() != state.states.front().length()) throw StateError("per-class caches have different lengths");
  }
  if (new_token < 0 || static_cast<std::size_t>(new_token) >= cclm.config().base_vocab_size()) {
    throw ValidationError("token " + std::to_string(new_token) + " outside vocabulary");
  }
  for (std::size_t c = 0; c < classes; ++c) {
    state.log_likelihood[c] += state.next_log_probs[c][static_cast<std::size_t>(new_token)];
    state.next_log_probs[c] = log_softmax(forward_incremental(cclm, state.states[c], new_token, counters));
  }
  return bayes_posterior(state.log_likelihood, {});
}

std::unique_ptr<Discriminator> make_discriminator(std::shared_ptr<const Model> model) {
  const ModelConfig& cfg = model->config();
  if (cfg.head_kind == HeadKind::classifier) {
    if (cfg.mask_mode == MaskMode::bidirectional) return std::make_unique<BidirectionalDiscriminator>(std::move(model));
    return std::make_unique<UnidirectionalDiscriminator>(std::move(model));
  }
  if (cfg.class_conditional()) return std::make_unique<GenerativeDiscriminator>(std::move(model));
  throw ConfigurationError("checkpoint is a plain language model, not a discriminator");
}

}  // namespace coopgen
