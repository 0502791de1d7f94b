// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include "coopgen/mcts.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <thread>

#include "coopgen/errors.hpp"
#include "coopgen/numerics.hpp"

namespace coopgen {

LmContextPtr LanguageModel::start(std::span<const TokenId> tokens, CostCounters* counters) const {
  if (tokens.empty() || tokens.front() != kBos) throw ValidationError("LM input must start with BOS");
  auto ctx = std::make_shared<LmContext>();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) ctx->log_likelihood += log_softmax(ctx->next_logits)[static_cast<std::size_t>(tokens[i])];
    ctx->tokens.push_back(tokens[i]);
    ctx->next_logits = advance(*ctx, tokens[i], counters);
  }
  return ctx;
}

LmContextPtr LanguageModel::extend(const LmContext& parent, TokenId token, CostCounters* counters) const {
  if (token < 0 || static_cast<std::size_t>(token) >= parent.next_logits.size()) {
    throw IndexError("token " + std::to_string(token) + " outside LM vocabulary");
  }
  auto ctx = std::make_shared<LmContext>();
  ctx->tokens = parent.tokens;
  ctx->tokens.push_back(token);
  ctx->log_likelihood = parent.log_likelihood + log_softmax(parent.next_logits)[static_cast<std::size_t>(token)];
  ctx->state = fork_state(parent.state);
  ctx->next_logits = advance(*ctx, token, counters);
  return ctx;
}

TransformerLm::TransformerLm(std::shared_ptr<const Model> model) : model_(std::move(model)) {
  const ModelConfig& cfg = model_->config();
  if (cfg.head_kind != HeadKind::lm || cfg.mask_mode != MaskMode::causal || cfg.class_conditional()) {
    throw ConfigurationError("generator must be an unconditional causal language model");
  }
}

std::vector<double> TransformerLm::advance(LmContext& context, TokenId token, CostCounters* counters) const {
  return forward_incremental(*model_, context.state, token, counters);
}

void SearchParams::validate() const {
  if (!(c_puct >= 0.0)) throw ParameterError("c_puct must be non-negative");
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  if (iterations_per_token == 0) throw ParameterError("iterations_per_token must be at least 1");
  if (mixing_exponent < 0.0) throw ParameterError("mixing exponent must be non-negative");
}

double puct_score(const SearchNode& parent, const SearchNode& child, double c_puct, bool max_backup) {
  double q = 0.0;
  if (child.visits > 0) q = max_backup ? child.max_value : child.mean_value();
  // A just-expanded parent has N = 0; treating it as 1 keeps the prior term
  // active so the first selection follows the highest prior.
  const double parent_visits = static_cast<double>(std::max<std::uint64_t>(parent.visits, 1));
  return q + c_puct * child.prior * std::sqrt(parent_visits) / (1.0 + static_cast<double>(child.visits));
}

SearchStats& SearchStats::operator+=(const SearchStats& other) {
  discriminator += other.discriminator;
  lm += other.lm;
  parents_scored += other.parents_scored;
  evaluated_children += other.evaluated_children;
  return *this;
}

double SearchStats::width() const {
  return parents_scored == 0 ? 0.0 : static_cast<double>(evaluated_children) / static_cast<double>(parents_scored);
}

void check_compatible(const LanguageModel& lm, const Discriminator* discriminator, const SearchParams& params) {
  params.validate();
  if (params.value_source == ValueSource::discriminator) {
    if (discriminator == nullptr) throw ConfigurationError("discriminator value source needs a discriminator");
    if (discriminator->vocab_size() != lm.vocab_size() ||
        (!lm.alphabet().empty() && !discriminator->alphabet().empty() && lm.alphabet() != discriminator->alphabet())) {
      throw ConfigurationError("language model and discriminator use different vocabularies");
    }
    if (params.target_class >= discriminator->num_classes()) {
      throw ConfigurationError("target class " + std::to_string(params.target_class) + " but the discriminator has " +
                               std::to_string(discriminator->num_classes()) + " classes");
    }
  }
  if (params.max_length + 1 > lm.max_positions()) {
    throw ConfigurationError("max_length " + std::to_string(params.max_length) + " exceeds the LM context of " +
                             std::to_string(lm.max_positions()) + " positions");
  }
}

namespace {

struct Search {
  const LanguageModel& lm;
  const Discriminator* disc;
  const SearchParams& params;
  SearchStats& stats;

  void materialize_children(SearchNode& node) const {
    const std::vector<double>& logits = node.lm->next_logits;
    const std::vector<double> log_probs = log_softmax(logits);
    std::vector<TokenId> cands;
    std::vector<double> scaled;
    for (std::size_t v = 0; v < logits.size(); ++v) {
      const auto tok = static_cast<TokenId>(v);
      if (tok == kBos || tok == kPad || (tok == kEos && !params.allow_eos)) continue;
      cands.push_back(tok);
      scaled.push_back(logits[v] / params.tau);
    }
    const std::vector<double> priors = softmax(scaled);
    node.children.clear();
    node.children.reserve(cands.size());
    for (std::size_t i = 0; i < cands.size(); ++i) {
      auto child = std::make_unique<SearchNode>();
      child->token = cands[i];
      child->prior = priors[i];
      child->length = node.length + 1;
      child->log_likelihood = node.log_likelihood + log_probs[static_cast<std::size_t>(cands[i])];
      child->terminal = cands[i] == kEos || child->length - 1 >= params.max_length;
      node.children.push_back(std::move(child));
    }
    node.children_scored = false;
    node.evaluated_children = 0;
  }

  void expand(SearchNode& node, const SearchNode& parent) const {
    node.lm = lm.extend(*parent.lm, node.token, &stats.lm);
    materialize_children(node);
  }

  static void assign(SearchNode& node, const ChildScores& scores, std::size_t i) {
    node.posterior = scores.posteriors[i];
    node.disc = scores.contexts[i];
  }

  void score(SearchNode& node, SearchNode& parent) const {
    if (node.posterior) return;
    if (disc->family() == Family::generative) {
      std::vector<TokenId> tokens;
      for (const auto& c : parent.children) tokens.push_back(c->token);
      const ChildScores scores = disc->score_children(*parent.disc, tokens);
      for (std::size_t i = 0; i < parent.children.size(); ++i) assign(*parent.children[i], scores, i);
      parent.children_scored = true;
      stats.discriminator += scores.cost;
    } else {
      const TokenId tok = node.token;
      const ChildScores scores = disc->score_children(*parent.disc, std::span<const TokenId>(&tok, 1));
      assign(node, scores, 0);
      stats.discriminator += scores.cost;
    }
  }

  double lm_value(const SearchNode& node) const {
    return std::exp(node.log_likelihood / static_cast<double>(node.length - 1));
  }

  double evaluate(SearchNode& node, SearchNode& parent) const {
    if (node.value) return *node.value;
    double v;
    if (params.value_source == ValueSource::lm_likelihood) {
      v = lm_value(node);
    } else {
      score(node, parent);
      v = node.posterior->probs[params.target_class];
      if (params.mixing_exponent > 0.0) v *= std::pow(lm_value(node), params.mixing_exponent);
    }
    node.value = v;
    stats.evaluated_children += 1;
    if (parent.evaluated_children++ == 0) stats.parents_scored += 1;
    return v;
  }

  SearchNode* select_child(const SearchNode& node) const {
    SearchNode* best = nullptr;
    double best_score = 0.0;
    for (const auto& c : node.children) {
      const double s = puct_score(node, *c, params.c_puct, params.max_backup);
      if (best == nullptr || s > best_score) {
        best = c.get();
        best_score = s;
      }
    }
    return best;
  }
};

void copy_statistics(SearchNode& to, const SearchNode& from) {
  to.visits = from.visits;
  to.total_value = from.total_value;
  to.max_value = from.max_value;
  to.self_evaluations = from.self_evaluations;
}

}  // namespace

SearchTree make_tree(std::span<const TokenId> prompt, const LanguageModel& lm, const Discriminator* discriminator,
                     const SearchParams& params) {
  check_compatible(lm, discriminator, params);
  SearchTree tree;
  tree.root = std::make_unique<SearchNode>();
  SearchNode& root = *tree.root;
  root.token = prompt.empty() ? kBos : prompt.back();
  root.length = prompt.size();
  root.lm = lm.start(prompt, &tree.stats.lm);
  root.log_likelihood = root.lm->log_likelihood;
  root.terminal = prompt.back() == kEos || prompt.size() - 1 >= params.max_length;
  if (params.value_source == ValueSource::discriminator) {
    root.disc = discriminator->encode(prompt, &tree.stats.discriminator);
    root.posterior = discriminator->posterior(*root.disc);
  }
  Search{lm, discriminator, params, tree.stats}.materialize_children(root);
  return tree;
}

void run_iteration(SearchTree& tree, const LanguageModel& lm, const Discriminator* discriminator,
                   const SearchParams& params) {
  Search search{lm, discriminator, params, tree.stats};
  SearchNode* node = tree.root.get();
  if (node->terminal || !node->expanded()) throw StateError("search root is terminal or unexpanded");
  std::vector<SearchNode*> path{node};
  while (node->expanded() && !node->terminal) {
    node = search.select_child(*node);
    path.push_back(node);
  }
  SearchNode& parent = *path[path.size() - 2];
  const double v = search.evaluate(*node, parent);
  if (!node->terminal) search.expand(*node, parent);
  node->self_evaluations += 1;
  for (SearchNode* n : path) {
    n->visits += 1;
    n->total_value += v;
    n->max_value = std::max(n->max_value, v);
  }
  if (tree.record_trace) {
    std::vector<TokenId> tokens;
    for (std::size_t i = 1; i < path.size(); ++i) tokens.push_back(path[i]->token);
    tree.trace.push_back(std::move(tokens));
  }
}

DecodeResult decode_step(SearchTree& tree, const LanguageModel& lm, const Discriminator* discriminator,
                         const SearchParams& params) {
  for (std::size_t i = 0; i < params.iterations_per_token; ++i) run_iteration(tree, lm, discriminator, params);
  auto& children = tree.root->children;
  std::size_t best = 0;
  for (std::size_t i = 1; i < children.size(); ++i) {
    const SearchNode& c = *children[i];
    const SearchNode& b = *children[best];
    if (c.visits > b.visits || (c.visits == b.visits && c.mean_value() > b.mean_value())) best = i;
  }
  DecodeResult out;
  out.token = children[best]->token;
  out.subtree = std::move(children[best]);
  children.erase(children.begin() + static_cast<std::ptrdiff_t>(best));
  return out;
}

SearchTree rebuild_tree(const SearchNode& source, const LanguageModel& lm, const Discriminator* discriminator,
                        const SearchParams& params) {
  if (!source.expanded()) throw StateError("only expanded nodes can be rebuilt");
  SearchTree tree = make_tree(source.lm->tokens, lm, discriminator, params);
  Search search{lm, discriminator, params, tree.stats};
  copy_statistics(*tree.root, source);
  struct Frame {
    SearchNode* fresh;
    const SearchNode* old;
  };
  std::vector<Frame> stack{{tree.root.get(), &source}};
  while (!stack.empty()) {
    const Frame f = stack.back();
    stack.pop_back();
    if (f.fresh->children.size() != f.old->children.size()) throw StateError("rebuilt node has a different fan-out");
    for (std::size_t i = 0; i < f.old->children.size(); ++i) {
      SearchNode& fresh = *f.fresh->children[i];
      const SearchNode& old = *f.old->children[i];
      if (old.value) search.evaluate(fresh, *f.fresh);
      if (old.expanded()) {
        search.expand(fresh, *f.fresh);
        stack.push_back({&fresh, &old});
      }
      copy_statistics(fresh, old);
    }
  }
  return tree;
}

GenerationResult generate(std::span<const TokenId> prompt, const LanguageModel& lm, const Discriminator* discriminator,
                          const SearchParams& params) {
  check_compatible(lm, discriminator, params);
  if (prompt.empty() || prompt.front() != kBos) throw ValidationError("prompt must start with BOS");
  GenerationResult result;
  result.tokens.assign(prompt.begin(), prompt.end());
  auto done = [&] {
    return result.tokens.back() == kEos || result.tokens.size() - 1 >= params.max_length ||
           (params.max_steps > 0 && result.steps.size() >= params.max_steps);
  };
  if (done()) return result;
  SearchTree tree = make_tree(prompt, lm, discriminator, params);
  result.setup = tree.stats;
  result.total = tree.stats;
  while (true) {
    tree.stats = SearchStats{};
    StepRecord rec;
    rec.step = result.steps.size();
    rec.prefix_length = result.tokens.size();
    const auto started = std::chrono::steady_clock::now();
    DecodeResult d = decode_step(tree, lm, discriminator, params);
    rec.token = d.token;
    result.tokens.push_back(d.token);
    tree.root = std::move(d.subtree);
    if (!done() && !params.reuse_subtree) {
      SearchNode& root = *tree.root;
      root.visits = 0;
      root.total_value = 0.0;
      root.max_value = 0.0;
      root.self_evaluations = 0;
      Search{lm, discriminator, params, tree.stats}.materialize_children(root);
    }
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    rec.stats = tree.stats;
    result.total += rec.stats;
    result.steps.push_back(rec);
    if (done()) break;
  }
  return result;
}

std::vector<GenerationResult> generate_batch(std::span<const BatchItem> items, const LanguageModel& lm,
                                             const Discriminator* discriminator, const SearchParams& params,
                                             std::size_t threads) {
  std::vector<GenerationResult> out(items.size());
  if (items.empty()) return out;
  for (const BatchItem& item : items) {
    SearchParams p = params;
    p.target_class = item.target_class;
    check_compatible(lm, discriminator, p);
  }
  auto run = [&](std::size_t i) {
    SearchParams p = params;
    p.target_class = items[i].target_class;
    out[i] = generate(items[i].prompt, lm, discriminator, p);
  };
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, items.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < items.size(); ++i) run(i);
    return out;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < items.size(); i += workers) run(i);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace coopgen
