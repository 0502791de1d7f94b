// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "coopgen/errors.hpp"
#include "coopgen/model.hpp"

using namespace coopgen;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(HeadKind head, MaskMode mask, std::size_t vocab = 12) {
  ModelConfig cfg;
  cfg.num_layers = 2;
  cfg.hidden_size = 8;
  cfg.num_heads = 2;
  cfg.max_positions = 64;
  cfg.vocab_size = vocab;
  cfg.head_kind = head;
  cfg.num_classes = head == HeadKind::classifier ? 3 : 0;
  cfg.mask_mode = mask;
  return cfg;
}

// Random init with larger weights so attention is far from uniform.
Model perturbed_model(const ModelConfig& cfg, std::uint64_t seed) {
  Model m = Model::initialize(cfg, seed);
  Rng rng(seed + 1);
  for (double& p : m.parameters()) p += 0.3 * standard_normal(rng);
  return m;
}

TokenSequence random_tokens(std::size_t n, std::size_t vocab, Rng& rng) {
  TokenSequence t{kBos};
  while (t.size() < n) t.push_back(static_cast<TokenId>(kNumSpecialTokens + uniform_index(rng, vocab - kNumSpecialTokens)));
  return t;
}

bool relative_equal(std::span<const double> a, std::span<const double> b, double tol) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i] - b[i]) > tol * std::max({std::abs(a[i]), std::abs(b[i]), 1e-300})) return false;
  }
  return true;
}

double linear_loss(const Matrix& logits, const Matrix& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) s += logits.values()[i] * weights.values()[i];
  return s;
}

void check_gradients(const ModelConfig& cfg, std::uint64_t seed) {
  Model model = perturbed_model(cfg, seed);
  Rng rng(seed);
  const TokenSequence tokens = random_tokens(7, cfg.vocab_size, rng);
  ForwardTrace trace;
  const Matrix logits = forward_train(model, tokens, trace);
  Matrix weights(logits.rows(), logits.cols());
  for (double& w : weights.values()) w = standard_normal(rng);
  std::vector<double> grads(model.parameters().size(), 0.0);
  backward(model, trace, weights, grads);

  const double h = 1e-4;
  int checked = 0;
  for (int probe = 0; probe < 400; ++probe) {
    const std::size_t i = uniform_index(rng, grads.size());
    const double saved = model.parameters()[i];
    model.parameters()[i] = saved + h;
    const double up = linear_loss(forward_full(model, tokens), weights);
    model.parameters()[i] = saved - h;
    const double down = linear_loss(forward_full(model, tokens), weights);
    model.parameters()[i] = saved;
    const double numeric = (up - down) / (2 * h);
    if (std::abs(numeric) < 1e-7 && std::abs(grads[i]) < 1e-7) continue;
    ++checked;
    EXPECT_LE(std::abs(numeric - grads[i]), 1e-3 * std::max(std::abs(numeric), std::abs(grads[i])) + 1e-9)
        << "parameter " << i << " analytic " << grads[i] << " numeric " << numeric;
  }
  EXPECT_GT(checked, 100);
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig cfg = tiny_config(HeadKind::lm, MaskMode::causal);
  EXPECT_NO_THROW(cfg.validate());
  cfg.num_heads = 3;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg = tiny_config(HeadKind::lm, MaskMode::causal);
  cfg.max_positions = 10;
  EXPECT_THROW(cfg.validate(), ParameterError);
}

TEST(ModelConfig, HeadWidthFollowsHeadKind) {
  EXPECT_EQ(tiny_config(HeadKind::lm, MaskMode::causal).head_width(), 12u);
  EXPECT_EQ(tiny_config(HeadKind::classifier, MaskMode::causal).head_width(), 3u);
  const Model lm = Model::initialize(tiny_config(HeadKind::lm, MaskMode::causal), 1);
  const Model clf = Model::initialize(tiny_config(HeadKind::classifier, MaskMode::bidirectional), 1);
  EXPECT_EQ(forward_full(lm, TokenSequence{kBos, 4}).cols(), 12u);
  EXPECT_EQ(forward_full(clf, TokenSequence{kBos, 4}).cols(), 3u);
}

TEST(ForwardFull, LengthOneShape) {
  const Model lm = Model::initialize(tiny_config(HeadKind::lm, MaskMode::causal), 1);
  const Matrix out = forward_full(lm, TokenSequence{kBos});
  EXPECT_EQ(out.rows(), 1u);
  EXPECT_EQ(out.cols(), 12u);
  const Model clf = Model::initialize(tiny_config(HeadKind::classifier, MaskMode::causal), 1);
  EXPECT_EQ(forward_full(clf, TokenSequence{kBos}).rows(), 1u);
}

TEST(ForwardFull, CapacityErrors) {
  const Model lm = Model::initialize(tiny_config(HeadKind::lm, MaskMode::causal), 1);
  EXPECT_THROW(forward_full(lm, TokenSequence{}), CapacityError);
  EXPECT_THROW(forward_full(lm, TokenSequence(65, 3)), CapacityError);
  EXPECT_THROW(forward_full(lm, TokenSequence{kBos, 40}), IndexError);
}

TEST(ForwardFull, CausalPrefixIsUnaffectedBySuffixEdits) {
  const Model lm = perturbed_model(tiny_config(HeadKind::lm, MaskMode::causal), 3);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    TokenSequence tokens = random_tokens(10, 12, rng);
    const Matrix before = forward_full(lm, tokens);
    const std::size_t edit = 1 + uniform_index(rng, tokens.size() - 1);
    tokens[edit] = static_cast<TokenId>(3 + (tokens[edit] - 3 + 1) % 9);
    const Matrix after = forward_full(lm, tokens);
    for (std::size_t i = 0; i < edit; ++i) {
      for (std::size_t j = 0; j < after.cols(); ++j) EXPECT_EQ(before(i, j), after(i, j));
    }
  }
}

TEST(ForwardFull, BidirectionalPrefixSeesLaterTokens) {
  const Model lm = perturbed_model(tiny_config(HeadKind::lm, MaskMode::bidirectional), 3);
  TokenSequence tokens{kBos, 4, 5, 6};
  const Matrix before = forward_full(lm, tokens);
  tokens[2] = 9;
  const Matrix after = forward_full(lm, tokens);
  double diff = 0.0;
  for (std::size_t j = 0; j < after.cols(); ++j) diff += std::abs(before(0, j) - after(0, j));
  EXPECT_GT(diff, 1e-6);
}

TEST(ForwardFull, AttentionScoreCounting) {
  const ModelConfig causal = tiny_config(HeadKind::lm, MaskMode::causal);
  const ModelConfig bidir = tiny_config(HeadKind::lm, MaskMode::bidirectional);
  const Model a = Model::initialize(causal, 1), b = Model::initialize(bidir, 1);
  for (std::size_t t : {1u, 2u, 7u, 30u}) {
    CostCounters ca, cb;
    forward_full(a, TokenSequence(t, 3), &ca);
    forward_full(b, TokenSequence(t, 3), &cb);
    EXPECT_EQ(ca.forward_passes, 1u);
    EXPECT_EQ(ca.attention_scores, 2u * 2u * t * (t + 1) / 2);
    EXPECT_EQ(cb.attention_scores, 2u * 2u * t * t);
  }
}

TEST(ForwardIncremental, BaseCaseEqualsFullExactly) {
  const Model lm = perturbed_model(tiny_config(HeadKind::lm, MaskMode::causal), 5);
  IncrementalState state;
  const auto logits = forward_incremental(lm, state, kBos);
  const Matrix full = forward_full(lm, TokenSequence{kBos});
  for (std::size_t j = 0; j < logits.size(); ++j) EXPECT_EQ(logits[j], full(0, j));
  EXPECT_EQ(state.length(), 1u);
}

TEST(ForwardIncremental, TokenByTokenMatchesFullRecompute) {
  for (HeadKind head : {HeadKind::lm, HeadKind::classifier}) {
    const ModelConfig cfg = tiny_config(head, MaskMode::causal);
    const Model model = perturbed_model(cfg, 6);
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
      const TokenSequence tokens = random_tokens(2 + uniform_index(rng, 40), cfg.vocab_size, rng);
      IncrementalState state;
      for (std::size_t i = 0; i < tokens.size(); ++i) {
        const auto inc = forward_incremental(model, state, tokens[i]);
        const std::span<const TokenId> prefix(tokens.data(), i + 1);
        const Matrix full = forward_full(model, prefix);
        const auto row = full.row(full.rows() - 1);
        EXPECT_TRUE(relative_equal(inc, row, 1e-9)) << "step " << i;
      }
    }
  }
}

TEST(ForwardIncremental, CountsScoresPerExtension) {
  const ModelConfig cfg = tiny_config(HeadKind::lm, MaskMode::causal);
  const Model lm = Model::initialize(cfg, 1);
  IncrementalState state;
  CostCounters total;
  for (int i = 0; i < 7; ++i) forward_incremental(lm, state, 3, &total);
  CostCounters last;
  forward_incremental(lm, state, 3, &last);
  EXPECT_EQ(last.forward_passes, 1u);
  EXPECT_EQ(last.attention_scores, 2u * 2u * 8u);  // 8 scores per head per layer
  total += last;
  EXPECT_EQ(total.attention_scores, 2u * 2u * 8u * 9u / 2u);
  EXPECT_EQ(total.forward_passes, 8u);
}

TEST(ForwardIncremental, BidirectionalIsModeError) {
  const Model m = Model::initialize(tiny_config(HeadKind::lm, MaskMode::bidirectional), 1);
  IncrementalState state;
  EXPECT_THROW(forward_incremental(m, state, kBos), ModeError);
}

TEST(ForwardIncremental, FullStateIsCapacityError) {
  const Model m = Model::initialize(tiny_config(HeadKind::lm, MaskMode::causal), 1);
  IncrementalState state;
  for (int i = 0; i < 64; ++i) forward_incremental(m, state, 3);
  EXPECT_THROW(forward_incremental(m, state, 3), CapacityError);
}

TEST(ForkState, ForksAreIsolated) {
  const ModelConfig cfg = tiny_config(HeadKind::lm, MaskMode::causal);
  const Model lm = perturbed_model(cfg, 8);
  IncrementalState base;
  for (TokenId t : {kBos, TokenId{4}, TokenId{5}}) forward_incremental(lm, base, t);
  IncrementalState a = fork_state(base);
  IncrementalState b = fork_state(base);
  IncrementalState probe = fork_state(b);
  const auto b_first = forward_incremental(lm, probe, 7);
  forward_incremental(lm, a, 6);
  forward_incremental(lm, a, 6);
  EXPECT_EQ(b.length(), 3u);
  EXPECT_EQ(forward_incremental(lm, b, 7), b_first);
  EXPECT_EQ(fork_state(IncrementalState{}).length(), 0u);
}

TEST(ForkState, HundredForksMatchFullForward) {
  const ModelConfig cfg = tiny_config(HeadKind::lm, MaskMode::causal);
  const Model lm = perturbed_model(cfg, 9);
  Rng rng(10);
  const TokenSequence prefix = random_tokens(12, cfg.vocab_size, rng);
  IncrementalState base;
  for (TokenId t : prefix) forward_incremental(lm, base, t);
  for (int i = 0; i < 100; ++i) {
    IncrementalState fork = fork_state(base);
    TokenSequence seq = prefix;
    const std::size_t extra = 1 + uniform_index(rng, 4);
    std::vector<double> inc;
    for (std::size_t k = 0; k < extra; ++k) {
      const auto tok = static_cast<TokenId>(3 + uniform_index(rng, 9));
      seq.push_back(tok);
      inc = forward_incremental(lm, fork, tok);
    }
    const Matrix full = forward_full(lm, seq);
    EXPECT_TRUE(relative_equal(inc, full.row(full.rows() - 1), 1e-9));
  }
}

TEST(Backward, GradientsMatchFiniteDifferences) {
  check_gradients(tiny_config(HeadKind::lm, MaskMode::causal), 21);
  check_gradients(tiny_config(HeadKind::lm, MaskMode::bidirectional), 22);
  check_gradients(tiny_config(HeadKind::classifier, MaskMode::causal), 23);
  check_gradients(tiny_config(HeadKind::classifier, MaskMode::bidirectional), 24);
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / "coopgen_ckpt_test";
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  std::vector<unsigned char> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  }
  void write_bytes(const fs::path& p, const std::vector<unsigned char>& b) {
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  }
  fs::path dir_;
};

TEST_F(CheckpointTest, RoundTripWithinFloat32Precision) {
  ModelConfig cfg = tiny_config(HeadKind::classifier, MaskMode::bidirectional);
  cfg.alphabet = "abc xyz";
  const Model m = Model::initialize(cfg, 42);
  save_checkpoint(m, dir_ / "m.ckpt");
  const Model back = load_checkpoint(dir_ / "m.ckpt");
  EXPECT_EQ(back.config(), m.config());
  double worst = 0.0;
  for (std::size_t i = 0; i < m.parameters().size(); ++i) {
    worst = std::max(worst, std::abs(m.parameters()[i] - back.parameters()[i]));
  }
  EXPECT_LE(worst, 1e-5);
}

TEST_F(CheckpointTest, CorruptedPayloadIsChecksumError) {
  const Model m = Model::initialize(tiny_config(HeadKind::lm, MaskMode::causal), 1);
  save_checkpoint(m, dir_ / "m.ckpt");
  auto bytes = read_bytes(dir_ / "m.ckpt");
  bytes[bytes.size() / 2] ^= 0x5A;
  write_bytes(dir_ / "bad.ckpt", bytes);
  try {
    load_checkpoint(dir_ / "bad.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointFailure::checksum);
  }
}

TEST_F(CheckpointTest, FutureVersionIsVersionError) {
  const Model m = Model::initialize(tiny_config(HeadKind::lm, MaskMode::causal), 1);
  save_checkpoint(m, dir_ / "m.ckpt");
  auto bytes = read_bytes(dir_ / "m.ckpt");
  bytes[4] = static_cast<unsigned char>(kCheckpointVersion + 1);
  write_bytes(dir_ / "v.ckpt", bytes);
  try {
    load_checkpoint(dir_ / "v.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointFailure::version);
  }
}

TEST_F(CheckpointTest, TruncatedFileIsTruncatedError) {
  const Model m = Model::initialize(tiny_config(HeadKind::lm, MaskMode::causal), 1);
  save_checkpoint(m, dir_ / "m.ckpt");
  auto bytes = read_bytes(dir_ / "m.ckpt");
  bytes.resize(bytes.size() - 100);
  write_bytes(dir_ / "t.ckpt", bytes);
  try {
    load_checkpoint(dir_ / "t.ckpt");
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.kind(), CheckpointFailure::truncated);
  }
  bytes = read_bytes(dir_ / "m.ckpt");
  bytes[0] = 'X';
  write_bytes(dir_ / "x.ckpt", bytes);
  EXPECT_THROW(load_checkpoint(dir_ / "x.ckpt"), CheckpointError);
}
