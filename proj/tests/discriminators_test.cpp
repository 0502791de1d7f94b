// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "coopgen/discriminators.hpp"
#include "coopgen/errors.hpp"

using namespace coopgen;

namespace {

constexpr std::size_t kChars = 9;  // base vocabulary = specials + 9 characters

ModelConfig classifier_config(MaskMode mask, std::size_t classes = 2) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_size = 8;
  cfg.num_heads = 2;
  cfg.vocab_size = kNumSpecialTokens + kChars;
  cfg.head_kind = HeadKind::classifier;
  cfg.num_classes = classes;
  cfg.mask_mode = mask;
  return cfg;
}

ModelConfig cclm_config(std::size_t classes = 2) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_size = 8;
  cfg.num_heads = 2;
  cfg.vocab_size = kNumSpecialTokens + kChars + classes;
  cfg.num_classes = classes;
  cfg.num_control_tokens = classes;
  cfg.max_positions = kMaxSequenceLength + 1;
  return cfg;
}

std::shared_ptr<const Model> random_model(const ModelConfig& cfg, std::uint64_t seed, double spread = 0.4) {
  Model m = Model::initialize(cfg, seed);
  Rng rng(seed ^ 0xABCDEF);
  for (double& p : m.parameters()) p += spread * standard_normal(rng);
  return std::make_shared<const Model>(std::move(m));
}

TokenSequence random_sequence(std::size_t content, Rng& rng) {
  TokenSequence t{kBos};
  for (std::size_t i = 0; i < content; ++i) t.push_back(static_cast<TokenId>(kNumSpecialTokens + uniform_index(rng, kChars)));
  return t;
}

std::vector<TokenId> all_tokens(std::size_t vocab) {
  std::vector<TokenId> v(vocab);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void expect_distribution(const ClassPosterior& p) {
  double total = 0.0;
  for (double x : p.probs) {
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
    total += x;
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
}

void expect_close(const ClassPosterior& a, const ClassPosterior& b, double tol) {
  ASSERT_EQ(a.probs.size(), b.probs.size());
  for (std::size_t c = 0; c < a.probs.size(); ++c) EXPECT_NEAR(a.probs[c], b.probs[c], tol);
}

// Class-conditional bigram table p(y | x, c) = softmax(A[x] + B[c])[y],
// realized exactly as a one-layer, one-head transformer: one-hot embeddings,
// attention that locks onto the control token and copies its class into a
// dedicated dimension, a zero FFN and a head that reads A and B back out.
struct BigramTable {
  static constexpr std::size_t kBase = kNumSpecialTokens + 3;
  static constexpr std::size_t kClasses = 2;
  static constexpr std::size_t kTotal = kBase + kClasses;
  static constexpr std::size_t kHidden = kTotal + kClasses;

  std::vector<std::vector<double>> a;  // kTotal x kTotal
  std::vector<std::vector<double>> b;  // kClasses x kTotal

  explicit BigramTable(std::uint64_t seed) {
    Rng rng(seed);
    a.assign(kTotal, std::vector<double>(kTotal));
    b.assign(kClasses, std::vector<double>(kTotal));
    for (auto& row : a)
      for (double& x : row) x = 1.5 * standard_normal(rng);
    for (auto& row : b)
      for (double& x : row) x = 1.5 * standard_normal(rng);
  }

  double log_prob(TokenId prev, std::size_t cls, TokenId next) const {
    std::vector<double> logits(kTotal);
    for (std::size_t y = 0; y < kTotal; ++y) logits[y] = a[prev][y] + b[cls][y];
    double peak = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - peak);
    return logits[static_cast<std::size_t>(next)] - peak - std::log(z);
  }

  // Exhaustive Bayes: p(c | x) = p(x | c) / sum_c' p(x | c') under a uniform prior.
  std::vector<double> posterior(const TokenSequence& tokens) const {
    std::vector<double> joint(kClasses);
    for (std::size_t c = 0; c < kClasses; ++c) {
      double lp = 0.0;
      TokenId prev = static_cast<TokenId>(kBase + c);
      for (std::size_t i = 1; i < tokens.size(); ++i) {
        lp += log_prob(prev, c, tokens[i]);
        prev = tokens[i];
      }
      joint[c] = std::exp(lp);
    }
    const double total = joint[0] + joint[1];
    for (double& j : joint) j /= total;
    return joint;
  }

  std::shared_ptr<const Model> as_model() const {
    ModelConfig cfg;
    cfg.num_layers = 1;
    cfg.num_heads = 1;
    cfg.hidden_size = kHidden;
    cfg.vocab_size = kTotal;
    cfg.num_classes = kClasses;
    cfg.num_control_tokens = kClasses;
    cfg.max_positions = kMaxSequenceLength + 1;
    Model m(cfg);
    const ParamLayout& lay = m.layout();
    const LayerOffsets& o = lay.layers[0];
    auto w = [&](std::size_t offset, std::size_t row, std::size_t col, std::size_t cols) -> double& {
      return m.parameters()[offset + row * cols + col];
    };
    const double h = static_cast<double>(kHidden);
    for (std::size_t i = 0; i < kTotal; ++i) w(lay.token_embedding, i, i, kHidden) = 1.0;
    // Layer-norm scale of a one-hot row, and of a row with two ones.
    const double m1 = 1.0 / h, s1 = std::sqrt((1.0 - m1) * (1.0 - m1) / h + (h - 1) * m1 * m1 / h + 1e-5);
    const double m2 = 2.0 / h, s2 = std::sqrt(2 * (1.0 - m2) * (1.0 - m2) / h + (h - 2) * m2 * m2 / h + 1e-5);
    m.parameters()[o.bq] = 100.0;
    for (std::size_t c = 0; c < kClasses; ++c) {
      w(o.wk, kBase + c, 0, kHidden) = s1 * std::sqrt(h);
      w(o.wv, kBase + c, kTotal + c, kHidden) = s1;
      m.parameters()[o.bv + kTotal + c] = m1;
    }
    for (std::size_t j = 0; j < kHidden; ++j) w(o.wo, j, j, kHidden) = 1.0;
    for (std::size_t y = 0; y < kTotal; ++y) {
      double column = 0.0;
      for (std::size_t j = 0; j < kHidden; ++j) {
        const double t = j < kTotal ? a[j][y] : b[j - kTotal][y];
        w(lay.head_weight, j, y, kTotal) = s2 * t;
        column += t;
      }
      m.parameters()[lay.head_bias + y] = m2 * column;
    }
    return std::make_shared<const Model>(std::move(m));
  }
};

}  // namespace

TEST(Family, NamesRoundTrip) {
  for (Family f : {Family::bidirectional, Family::unidirectional, Family::generative}) {
    EXPECT_EQ(parse_family(family_name(f)), f);
  }
  EXPECT_THROW(parse_family("mlp"), ParameterError);
}

TEST(Bidirectional, ZeroHeadGivesUniformPosterior) {
  Model m = Model::initialize(classifier_config(MaskMode::bidirectional, 3), 5);
  std::fill_n(m.parameters().begin() + static_cast<std::ptrdiff_t>(m.layout().head_weight),
              m.config().hidden_size * 3, 0.0);
  const ClassPosterior p = score_sequence_bidirectional(m, TokenSequence{kBos, 4, 5});
  for (double x : p.probs) EXPECT_DOUBLE_EQ(x, 1.0 / 3.0);
}

TEST(Bidirectional, WrongConfigurationIsRejected) {
  const auto causal = random_model(classifier_config(MaskMode::causal), 1);
  EXPECT_THROW(BidirectionalDiscriminator{causal}, ConfigurationError);
  EXPECT_THROW(score_sequence_bidirectional(*causal, TokenSequence{kBos}), ConfigurationError);
  EXPECT_THROW(UnidirectionalDiscriminator{random_model(classifier_config(MaskMode::bidirectional), 1)},
               ConfigurationError);
  EXPECT_THROW(GenerativeDiscriminator{causal}, ConfigurationError);
}

TEST(Bidirectional, CostIsOneFullForwardPerCandidate) {
  const auto model = random_model(classifier_config(MaskMode::bidirectional), 2);
  BidirectionalDiscriminator disc(model);
  const auto ctx = disc.encode(TokenSequence{kBos, 4, 5, 6});
  const std::vector<TokenId> cands{3, 7, 9};
  const ChildScores s = disc.score_children(*ctx, cands);
  EXPECT_EQ(s.cost.forward_passes, 3u);
  EXPECT_EQ(s.cost.attention_scores, 3u * full_pass_attention_scores(model->config(), 5));
  for (std::size_t i = 0; i < cands.size(); ++i) {
    TokenSequence seq{kBos, 4, 5, 6, cands[i]};
    expect_close(s.posteriors[i], score_sequence_bidirectional(*model, seq), 0.0);
    EXPECT_EQ(s.contexts[i]->tokens(), seq);
  }
}

TEST(Posteriors, NormalizedForEveryFamilyOnFuzzedInputs) {
  const auto bi = std::make_shared<BidirectionalDiscriminator>(random_model(classifier_config(MaskMode::bidirectional, 3), 3));
  const auto uni = std::make_shared<UnidirectionalDiscriminator>(random_model(classifier_config(MaskMode::causal, 3), 4));
  const auto gedi = std::make_shared<GenerativeDiscriminator>(random_model(cclm_config(3), 5));
  Rng rng(6);
  for (const Discriminator* d : std::initializer_list<const Discriminator*>{bi.get(), uni.get(), gedi.get()}) {
    for (int trial = 0; trial < 30; ++trial) {
      const auto tokens = random_sequence(uniform_index(rng, 40), rng);
      const auto ctx = d->encode(tokens);
      expect_distribution(d->posterior(*ctx));
      const ChildScores s = d->score_children(*ctx, std::vector<TokenId>{3, 5, 11});
      for (const auto& p : s.posteriors) expect_distribution(p);
    }
  }
}

TEST(Unidirectional, TokenByTokenEqualsOneShotCausalScoring) {
  const auto model = random_model(classifier_config(MaskMode::causal), 7);
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto tokens = random_sequence(1 + uniform_index(rng, 50), rng);
    IncrementalState state;
    ClassPosterior last;
    for (TokenId t : tokens) last = score_sequence_unidirectional(*model, state, t);
    const ClassPosterior full{softmax(forward_full(*model, tokens).row(0))};
    for (std::size_t c = 0; c < 2; ++c) EXPECT_LE(std::abs(last.probs[c] - full.probs[c]), 1e-9 * full.probs[c]);
  }
}

TEST(Unidirectional, BosOnlyMatchesFullForward) {
  const auto model = random_model(classifier_config(MaskMode::causal), 9);
  IncrementalState state;
  const ClassPosterior p = score_sequence_unidirectional(*model, state, kBos);
  const ClassPosterior q{softmax(forward_full(*model, TokenSequence{kBos}).row(0))};
  expect_close(p, q, 0.0);
}

TEST(Unidirectional, CountersFollowCachingArithmetic) {
  const auto model = random_model(classifier_config(MaskMode::causal), 10);
  const ModelConfig& cfg = model->config();
  const std::uint64_t lh = cfg.num_layers * cfg.num_heads;
  constexpr std::uint64_t t = 17;
  IncrementalState state;
  CostCounters total, last;
  for (std::uint64_t i = 0; i + 1 < t; ++i) score_sequence_unidirectional(*model, state, 4, &total);
  score_sequence_unidirectional(*model, state, 4, &last);
  total += last;
  EXPECT_EQ(total.attention_scores, lh * t * (t + 1) / 2);
  EXPECT_EQ(last.attention_scores, lh * t);
  EXPECT_EQ(total.forward_passes, t);
}

TEST(Unidirectional, KCandidatesCostKForwards) {
  const auto model = random_model(classifier_config(MaskMode::causal), 11);
  UnidirectionalDiscriminator disc(model);
  const auto ctx = disc.encode(TokenSequence{kBos, 5, 6});
  for (std::size_t k : {0u, 1u, 4u, 12u}) {
    std::vector<TokenId> cands(k);
    for (std::size_t i = 0; i < k; ++i) cands[i] = static_cast<TokenId>(i % disc.vocab_size());
    EXPECT_EQ(disc.score_children(*ctx, cands).cost.forward_passes, k);
  }
}

TEST(Unidirectional, FullStateIsStateError) {
  const auto model = random_model(classifier_config(MaskMode::causal), 12);
  IncrementalState state;
  for (std::size_t i = 0; i < model->config().max_positions; ++i) score_sequence_unidirectional(*model, state, 4);
  EXPECT_THROW(score_sequence_unidirectional(*model, state, 4), StateError);
}

TEST(Unidirectional, ChildrenMatchFreshEncoding) {
  const auto model = random_model(classifier_config(MaskMode::causal), 13);
  UnidirectionalDiscriminator disc(model);
  const TokenSequence prefix{kBos, 4, 8, 3};
  const auto ctx = disc.encode(prefix);
  const auto cands = all_tokens(disc.vocab_size());
  const ChildScores s = disc.score_children(*ctx, cands);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    TokenSequence seq = prefix;
    seq.push_back(cands[i]);
    expect_close(s.posteriors[i], disc.classify(seq), 0.0);
  }
}

TEST(Gedi, IdenticalLikelihoodsGiveUniformPosterior) {
  const std::vector<double> ll{-3.2, -3.2};
  const ClassPosterior p = bayes_posterior(ll);
  EXPECT_DOUBLE_EQ(p.probs[0], 0.5);
  EXPECT_DOUBLE_EQ(p.probs[1], 0.5);
  // A CC-LM whose head ignores its input assigns every class the same likelihood.
  ModelConfig cfg = cclm_config();
  Model m = Model::initialize(cfg, 3);
  std::fill_n(m.parameters().begin() + static_cast<std::ptrdiff_t>(m.layout().head_weight),
              cfg.hidden_size * cfg.vocab_size, 0.0);
  GenerativeDiscriminator disc(std::make_shared<const Model>(std::move(m)));
  const ClassPosterior q = disc.classify(TokenSequence{kBos, 4, 9, 5});
  EXPECT_NEAR(q.probs[0], 0.5, 1e-15);
}

TEST(Gedi, ClosedFormTwoClassPosterior) {
  const std::vector<double> ll{-10.0, -10.0 + std::log(3.0)};
  const ClassPosterior p = bayes_posterior(ll);
  EXPECT_NEAR(p.probs[0], 0.25, 1e-15);
  EXPECT_NEAR(p.probs[1], 0.75, 1e-15);
}

TEST(Gedi, LogPriorShiftsPosterior) {
  const std::vector<double> ll{-1.0, -1.0};
  const std::vector<double> prior{std::log(0.2), std::log(0.8)};
  EXPECT_NEAR(bayes_posterior(ll, prior).probs[1], 0.8, 1e-15);
  EXPECT_THROW(GenerativeDiscriminator(random_model(cclm_config(), 1), {0.0}), ParameterError);
}

TEST(Gedi, BigramTableMatchesExhaustiveBayes) {
  const BigramTable table(31);
  const auto model = table.as_model();
  GenerativeDiscriminator disc(model);
  ASSERT_EQ(disc.vocab_size(), BigramTable::kBase);
  // Every sequence over the three characters up to length 4.
  std::vector<TokenSequence> frontier{{kBos}};
  std::size_t checked = 0;
  for (int len = 1; len <= 4; ++len) {
    std::vector<TokenSequence> next;
    for (const auto& s : frontier) {
      for (TokenId ch = kNumSpecialTokens; ch < static_cast<TokenId>(BigramTable::kBase); ++ch) {
        TokenSequence e = s;
        e.push_back(ch);
        const auto oracle = table.posterior(e);
        const ClassPosterior lazy = disc.classify(e);
        GediSequentialState st = gedi_initial_state(*model);
        ClassPosterior eager;
        for (std::size_t i = 1; i < e.size(); ++i) eager = gedi_class_posterior(*model, st, e[i]);
        for (std::size_t c = 0; c < 2; ++c) {
          EXPECT_NEAR(lazy.probs[c], oracle[c], 1e-9);
          EXPECT_NEAR(eager.probs[c], oracle[c], 1e-9);
        }
        ++checked;
        next.push_back(std::move(e));
      }
    }
    frontier = std::move(next);
  }
  EXPECT_EQ(checked, 3u + 9u + 27u + 81u);
}

TEST(Gedi, ScoreChildrenMatchesNaiveLoopWithClassCountForwards) {
  for (std::size_t classes : {2u, 4u}) {
    const auto model = random_model(cclm_config(classes), 40 + classes);
    GenerativeDiscriminator disc(model);
    Rng rng(41);
    for (int trial = 0; trial < 10; ++trial) {
      const auto prefix = random_sequence(uniform_index(rng, 30), rng);
      const auto ctx = disc.encode(prefix);
      const auto cands = all_tokens(disc.vocab_size());
      const ChildScores lazy = disc.score_children(*ctx, cands);
      EXPECT_EQ(lazy.cost.forward_passes, classes);
      ASSERT_EQ(lazy.tokens, cands);
      CostCounters naive_cost;
      for (std::size_t i = 0; i < cands.size(); ++i) {
        // Naive oracle: replay the whole prefix per candidate, one class at a time.
        GediSequentialState st = gedi_initial_state(*model);
        ClassPosterior naive;
        for (std::size_t k = 1; k < prefix.size(); ++k) naive = gedi_class_posterior(*model, st, prefix[k]);
        CostCounters one;
        naive = gedi_class_posterior(*model, st, cands[i], &one);
        naive_cost += one;
        for (std::size_t c = 0; c < classes; ++c) {
          EXPECT_LE(std::abs(lazy.posteriors[i].probs[c] - naive.probs[c]), 1e-9 * std::max(naive.probs[c], 1e-300));
        }
      }
      EXPECT_EQ(naive_cost.forward_passes, classes * cands.size());
    }
  }
}

TEST(Gedi, ChildContextsContinueTheChain) {
  const auto model = random_model(cclm_config(), 50);
  GenerativeDiscriminator disc(model);
  const TokenSequence prefix{kBos, 6, 7};
  auto ctx = disc.encode(prefix);
  TokenSequence seq = prefix;
  for (TokenId v : {TokenId{4}, TokenId{9}, TokenId{11}}) {
    const ChildScores s = disc.score_children(*ctx, std::vector<TokenId>{3, v});
    ctx = s.contexts[1];
    seq.push_back(v);
    EXPECT_EQ(ctx->tokens(), seq);
    expect_close(disc.posterior(*ctx), disc.classify(seq), 1e-12);
    expect_close(s.posteriors[1], disc.classify(seq), 1e-12);
  }
}

TEST(Gedi, EmptyCandidateSetIsFree) {
  GenerativeDiscriminator disc(random_model(cclm_config(), 51));
  const auto ctx = disc.encode(TokenSequence{kBos, 4});
  const ChildScores s = disc.score_children(*ctx, {});
  EXPECT_TRUE(s.tokens.empty());
  EXPECT_EQ(s.cost, CostCounters{});
}

TEST(Gedi, CandidateOutsideVocabularyIsValidationError) {
  const auto model = random_model(cclm_config(), 52);
  GenerativeDiscriminator disc(model);
  const auto ctx = disc.encode(TokenSequence{kBos});
  EXPECT_THROW(disc.score_children(*ctx, std::vector<TokenId>{static_cast<TokenId>(disc.vocab_size())}),
               ValidationError);
  EXPECT_THROW(disc.score_children(*ctx, std::vector<TokenId>{-1}), ValidationError);
}

TEST(Gedi, MismatchedStateLengthsAreStateError) {
  const auto model = random_model(cclm_config(), 53);
  GediSequentialState st = gedi_initial_state(*model);
  forward_incremental(*model, st.states[1], 4);
  EXPECT_THROW(gedi_class_posterior(*model, st, 5), StateError);
}

TEST(Gedi, SequentialCostIsClassCountPerToken) {
  const auto model = random_model(cclm_config(3), 54);
  GediSequentialState st = gedi_initial_state(*model);
  CostCounters c;
  gedi_class_posterior(*model, st, 5, &c);
  EXPECT_EQ(c.forward_passes, 3u);
}

TEST(CostGrowth, BidirectionalCubicUnidirectionalQuadratic) {
  const auto bi_model = random_model(classifier_config(MaskMode::bidirectional), 60);
  const auto uni_model = random_model(classifier_config(MaskMode::causal), 61);
  const std::uint64_t lh = 4;
  for (std::uint64_t big_t : {8u, 20u, 40u}) {
    TokenSequence seq{kBos};
    CostCounters bi, uni;
    IncrementalState state;
    score_sequence_unidirectional(*uni_model, state, kBos, &uni);
    score_sequence_bidirectional(*bi_model, seq, &bi);
    while (seq.size() < big_t) {
      seq.push_back(5);
      score_sequence_bidirectional(*bi_model, seq, &bi);
      score_sequence_unidirectional(*uni_model, state, 5, &uni);
    }
    // sum_t t^2 and sum_t t over t = 1..T.
    EXPECT_EQ(bi.attention_scores, lh * big_t * (big_t + 1) * (2 * big_t + 1) / 6);
    EXPECT_EQ(uni.attention_scores, lh * big_t * (big_t + 1) / 2);
  }
}

TEST(MakeDiscriminator, DispatchesOnCheckpointKind) {
  EXPECT_EQ(make_discriminator(random_model(classifier_config(MaskMode::bidirectional), 1))->family(),
            Family::bidirectional);
  EXPECT_EQ(make_discriminator(random_model(classifier_config(MaskMode::causal), 1))->family(), Family::unidirectional);
  EXPECT_EQ(make_discriminator(random_model(cclm_config(), 1))->family(), Family::generative);
  ModelConfig lm = cclm_config();
  lm.num_control_tokens = 0;
  lm.num_classes = 0;
  EXPECT_THROW(make_discriminator(random_model(lm, 1)), ConfigurationError);
}
