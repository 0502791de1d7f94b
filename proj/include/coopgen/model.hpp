// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0
//
// Tiny pre-layer-norm transformer shared by every model kind in the project.
// The generator LM, both discriminative classifiers and the class-conditional
// LM have the same backbone; they differ only in the attention mask and in
// the width of the single fully connected output layer.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "coopgen/cost.hpp"
#include "coopgen/data.hpp"
#include "coopgen/numerics.hpp"

namespace coopgen {

enum class HeadKind : std::uint8_t { lm = 0, classifier = 1 };
enum class MaskMode : std::uint8_t { bidirectional = 0, causal = 1 };

struct ModelConfig {
  std::size_t num_layers = 4;
  std::size_t hidden_size = 128;
  std::size_t num_heads = 4;
  std::size_t max_positions = kMaxSequenceLength;
  std::size_t vocab_size = 0;  // includes control tokens, if any
  HeadKind head_kind = HeadKind::lm;
  std::size_t num_classes = 0;          // classifier width, or class count of a conditional LM
  std::size_t num_control_tokens = 0;   // > 0 only for class-conditional LMs
  MaskMode mask_mode = MaskMode::causal;
  std::string alphabet;  // UTF-8 characters of the base vocabulary

  std::size_t ffn_size() const { return 4 * hidden_size; }
  std::size_t head_dim() const { return hidden_size / num_heads; }
  std::size_t head_width() const { return head_kind == HeadKind::lm ? vocab_size : num_classes; }
  /// |V| without control tokens.
  std::size_t base_vocab_size() const { return vocab_size - num_control_tokens; }
  bool class_conditional() const { return num_control_tokens > 0; }

  /// Throws ParameterError on an inconsistent configuration.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Offsets of every tensor in the flat parameter vector, in checkpoint order.
struct LayerOffsets {
  std::size_t ln1_gain, ln1_bias;
  std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t ln2_gain, ln2_bias;
  std::size_t w1, b1, w2, b2;
};

struct ParamLayout {
  std::size_t token_embedding = 0;
  std::size_t position_embedding = 0;
  std::vector<LayerOffsets> layers;
  std::size_t final_gain = 0, final_bias = 0;
  std::size_t head_weight = 0, head_bias = 0;
  std::size_t total = 0;

  static ParamLayout for_config(const ModelConfig& config);
};

class Model {
 public:
  Model() = default;
  /// All parameters zero except layer-norm gains (one).
  explicit Model(ModelConfig config);
  /// normal(0, 0.02) matrices, zero biases, unit layer-norm gains.
  static Model initialize(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ParamLayout& layout() const { return layout_; }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  const double* at(std::size_t offset) const { return params_.data() + offset; }

 private:
  ModelConfig config_;
  ParamLayout layout_;
  std::vector<double> params_;
};

/// Cached keys and values of one position for every layer (num_layers x hidden each).
struct PositionCache {
  std::vector<double> keys;
  std::vector<double> values;
};

/// Per-layer key/value activations of positions 0..t-1 of a causal model.
/// Blocks are immutable once written and shared between forks, so forking is
/// O(t) pointer copies and extending one fork never touches another.
class IncrementalState {
 public:
  std::size_t length() const { return positions_.size(); }
  bool empty() const { return positions_.empty(); }
  const PositionCache& position(std::size_t i) const { return *positions_[i]; }

 private:
  friend std::vector<double> forward_incremental(const Model&, IncrementalState&, TokenId,
                                                 CostCounters*);
  std::vector<std::shared_ptr<const PositionCache>> positions_;
};

IncrementalState fork_state(const IncrementalState& state);

/// Logits for every position (lm head, t x |V|) or for the final position
/// only (classifier head, 1 x |C|). Throws CapacityError when the sequence is
/// empty or longer than max_positions.
Matrix forward_full(const Model& model, std::span<const TokenId> tokens,
                    CostCounters* counters = nullptr);

/// Appends `token` to a causal model's cache and returns the logits of the
/// new last position. ModeError on a bidirectional model, CapacityError when
/// the cache is full.
std::vector<double> forward_incremental(const Model& model, IncrementalState& state, TokenId token,
                                        CostCounters* counters = nullptr);

/// Attention scores one call performs (per-call closed forms used for
/// double-entry accounting).
std::uint64_t full_pass_attention_scores(const ModelConfig& config, std::size_t length);
std::uint64_t incremental_attention_scores(const ModelConfig& config, std::size_t new_length);

/// Query-key dot products the attention kernel has evaluated on the calling
/// thread since it started, training passes included. Independent of the
/// closed forms above.
std::uint64_t attention_kernel_tally();

/// Activations retained by forward_train for backward().
struct ForwardTrace {
  struct Layer {
    Matrix input, norm1, q, k, v, context, mid, norm2, ffn_pre, ffn_act;
    std::vector<double> norm1_rstd, norm2_rstd;
    std::vector<double> probs;  // heads x t x t
  };
  std::vector<TokenId> tokens;
  std::vector<Layer> layers;
  Matrix output, final_norm;  // final residual stream and its layer norm
  std::vector<double> final_rstd;
};

Matrix forward_train(const Model& model, std::span<const TokenId> tokens, ForwardTrace& trace);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits), where
/// d_logits has the shape forward_train returned.
void backward(const Model& model, const ForwardTrace& trace, const Matrix& d_logits,
              std::span<double> grads);

/// Checkpoint file: magic "CGCK", u32 format version, u32 config length,
/// config block, u64 parameter count, parameters as little-endian float32,
/// then CRC-32 of everything between the version field and the checksum.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Model& model, const std::filesystem::path& path);
/// Throws CheckpointError (bad_magic, version, truncated, checksum).
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace coopgen
