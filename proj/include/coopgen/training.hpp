// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0
//
// Training loops for the generator LM, both classifier discriminators and the
// class-conditional LM. Sequences are processed one at a time without padding
// and gradients are averaged over each effective batch.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coopgen/data.hpp"
#include "coopgen/model.hpp"

namespace coopgen {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::size_t gradient_accumulation = 4;
  double learning_rate = 3e-4;  // decays linearly to zero, no warmup
  double weight_decay = 0.01;
  double lambda = 0.6;  // generative share of the class-conditional joint loss
  std::uint64_t seed = 0;

  std::size_t effective_batch() const { return batch_size * gradient_accumulation; }
  /// ParameterError on invalid values.
  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  std::string split;      // "train" or "validation"
  double loss = 0.0;
  std::optional<double> accuracy;    // percent
  std::optional<double> perplexity;
};

struct TrainResult {
  Model model;
  std::vector<EpochMetrics> metrics;
  std::vector<double> step_losses;  // mean loss of every optimizer step
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Next-token targets are tokens[first_target..] followed by EOS.
struct LmSequence {
  TokenSequence tokens;
  std::size_t first_target = 1;
};

std::vector<LmSequence> lm_sequences(const LabeledCorpus& corpus);
/// [BOS, control(label), x...] with the control token given, not predicted.
std::vector<LmSequence> conditioned_sequences(const LabeledCorpus& corpus, const ModelConfig& cclm);

/// Mean token negative log-likelihood of one sequence, and its gradient with
/// respect to the logits when `d_logits` is non-null.
double sequence_nll(const Matrix& logits, const LmSequence& seq, Matrix* d_logits = nullptr);

/// Total NLL and target count of `sequences` under `model`.
std::pair<double, std::size_t> corpus_nll(const Model& model, std::span<const LmSequence> sequences);

TrainResult train_lm(std::span<const LmSequence> train, std::span<const LmSequence> validation,
                     const ModelConfig& architecture, const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Class labels on randomly truncated prefixes; `architecture.mask_mode`
/// selects bidirectional or causal attention. ValidationError on a corpus
/// with fewer than two classes present.
TrainResult train_discriminator(const LabeledCorpus& train, const LabeledCorpus& validation,
                                const ModelConfig& architecture, const TrainConfig& config,
                                const EpochCallback& on_epoch = {});

/// lambda * L_g + (1 - lambda) * L_d, where L_g is the loss under the true
/// class and L_d the cross-entropy of softmax(-losses) against the label.
double joint_loss(std::span<const double> per_class_losses, std::size_t label, double lambda);
/// d(joint_loss) / d(per_class_losses).
std::vector<double> joint_loss_gradient(std::span<const double> per_class_losses, std::size_t label, double lambda);

/// Class-conditional LM trained with joint_loss over per-class sequence losses.
TrainResult train_cclm(const LabeledCorpus& train, const LabeledCorpus& validation, const ModelConfig& architecture,
                       const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Full-length accuracy (percent) of a classifier or class-conditional LM.
double classification_accuracy(const Model& model, const LabeledCorpus& corpus);

/// Architecture helpers sharing one backbone description.
ModelConfig lm_architecture(const ModelConfig& backbone, const Vocabulary& vocab);
ModelConfig classifier_architecture(const ModelConfig& backbone, const Vocabulary& vocab, std::size_t num_classes,
                                    MaskMode mask);
ModelConfig cclm_architecture(const ModelConfig& backbone, const Vocabulary& vocab, std::size_t num_classes);

/// CSV with header epoch,split,loss,accuracy,perplexity.
void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> metrics);

}  // namespace coopgen
