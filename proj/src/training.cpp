// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include "coopgen/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "coopgen/discriminators.hpp"
#include "coopgen/errors.hpp"
#include "coopgen/numerics.hpp"

namespace coopgen {

void TrainConfig::validate() const {
  if (epochs == 0) throw ParameterError("epochs must be at least 1");
  if (batch_size == 0 || gradient_accumulation == 0) throw ParameterError("batch size and accumulation must be >= 1");
  if (!(learning_rate > 0.0)) throw ParameterError("learning rate must be positive");
  if (weight_decay < 0.0) throw ParameterError("weight decay must be non-negative");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1]");
}

std::vector<LmSequence> lm_sequences(const LabeledCorpus& corpus) {
  std::vector<LmSequence> out;
  out.reserve(corpus.examples.size());
  for (const auto& e : corpus.examples) out.push_back({e.tokens, 1});
  return out;
}

namespace {

LmSequence conditioned(const LabeledExample& e, const ModelConfig& cclm, std::size_t cls) {
  LmSequence s;
  s.tokens.reserve(e.tokens.size() + 1);
  s.tokens.push_back(kBos);
  s.tokens.push_back(control_token(cclm, cls));
  s.tokens.insert(s.tokens.end(), e.tokens.begin() + 1, e.tokens.end());
  s.first_target = 2;
  return s;
}

}  // namespace

std::vector<LmSequence> conditioned_sequences(const LabeledCorpus& corpus, const ModelConfig& cclm) {
  std::vector<LmSequence> out;
  out.reserve(corpus.examples.size());
  for (const auto& e : corpus.examples) out.push_back(conditioned(e, cclm, e.label));
  return out;
}

double sequence_nll(const Matrix& logits, const LmSequence& seq, Matrix* d_logits) {
  const std::size_t t = seq.tokens.size();
  if (logits.rows() != t || seq.first_target == 0 || seq.first_target > t) {
    throw DimensionError("logits do not match the sequence");
  }
  const std::size_t n = t - seq.first_target + 1;
  if (d_logits != nullptr) *d_logits = Matrix(logits.rows(), logits.cols());
  double total = 0.0;
  for (std::size_t i = seq.first_target - 1; i < t; ++i) {
    const auto target = static_cast<std::size_t>(i + 1 < t ? seq.tokens[i + 1] : kEos);
    const auto row = logits.row(i);
    total += cross_entropy(row, target);
    if (d_logits != nullptr) {
      const std::vector<double> p = softmax(row);
      for (std::size_t j = 0; j < p.size(); ++j) (*d_logits)(i, j) = p[j] / static_cast<double>(n);
      (*d_logits)(i, target) -= 1.0 / static_cast<double>(n);
    }
  }
  return total / static_cast<double>(n);
}

std::pair<double, std::size_t> corpus_nll(const Model& model, std::span<const LmSequence> sequences) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& s : sequences) {
    const std::size_t n = s.tokens.size() - s.first_target + 1;
    total += sequence_nll(forward_full(model, s.tokens), s) * static_cast<double>(n);
    count += n;
  }
  return {total, count};
}

double joint_loss(std::span<const double> per_class_losses, std::size_t label, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1]");
  if (label >= per_class_losses.size()) throw IndexError("label outside the per-class losses");
  std::vector<double> neg(per_class_losses.begin(), per_class_losses.end());
  for (double& x : neg) x = -x;
  const double generative = per_class_losses[label];
  if (lambda == 1.0) return generative;
  return lambda * generative + (1.0 - lambda) * cross_entropy(neg, label);
}

std::vector<double> joint_loss_gradient(std::span<const double> per_class_losses, std::size_t label, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("lambda must lie in [0, 1]");
  if (label >= per_class_losses.size()) throw IndexError("label outside the per-class losses");
  std::vector<double> grad(per_class_losses.size(), 0.0);
  grad[label] = lambda;
  if (lambda == 1.0) return grad;
  std::vector<double> neg(per_class_losses.begin(), per_class_losses.end());
  for (double& x : neg) x = -x;
  const std::vector<double> p = softmax(neg);
  for (std::size_t c = 0; c < grad.size(); ++c) grad[c] += (1.0 - lambda) * ((c == label ? 1.0 : 0.0) - p[c]);
  return grad;
}

namespace {

// Loss of one example; accumulates weight * d(loss)/d(params) into grads.
using ExampleStep = std::function<double(const Model&, std::size_t, Rng&, std::span<double>, double)>;
using Evaluate = std::function<EpochMetrics(const Model&)>;

TrainResult run_training(Model model, std::size_t count, const TrainConfig& config, const ExampleStep& step,
                         const Evaluate& evaluate, const EpochCallback& on_epoch) {
  config.validate();
  if (count == 0) throw ValidationError("training corpus is empty");
  TrainResult result;
  const std::size_t batch = config.effective_batch();
  const std::size_t steps_per_epoch = (count + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  OptimizerState opt = OptimizerState::for_parameters(model.parameters().size(), config.learning_rate,
                                                      config.weight_decay);
  std::vector<double> grads(model.parameters().size());
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(config.seed, 1));
  std::size_t global_step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < count; start += batch) {
      const std::size_t m = std::min(batch, count - start);
      const double weight = 1.0 / static_cast<double>(m);
      std::fill(grads.begin(), grads.end(), 0.0);
      double batch_loss = 0.0;
      for (std::size_t k = 0; k < m; ++k) {
        const double loss = step(model, order[start + k], rng, grads, weight);
        if (!std::isfinite(loss)) throw TrainingError("loss diverged", epoch, global_step);
        batch_loss += loss;
      }
      opt.learning_rate =
          config.learning_rate * (1.0 - static_cast<double>(global_step) / static_cast<double>(total_steps));
      adamw_step(model.parameters(), grads, opt);
      ++global_step;
      epoch_loss += batch_loss;
      result.step_losses.push_back(batch_loss / static_cast<double>(m));
    }
    EpochMetrics train_row;
    train_row.epoch = epoch;
    train_row.split = "train";
    train_row.loss = epoch_loss / static_cast<double>(count);
    result.metrics.push_back(train_row);
    if (on_epoch) on_epoch(train_row);
    if (evaluate) {
      EpochMetrics val = evaluate(model);
      val.epoch = epoch;
      val.split = "validation";
      result.metrics.push_back(val);
      if (on_epoch) on_epoch(val);
    }
  }
  result.model = std::move(model);
  return result;
}

double lm_example(const Model& model, const LmSequence& seq, std::span<double> grads, double weight) {
  ForwardTrace trace;
  const Matrix logits = forward_train(model, seq.tokens, trace);
  Matrix d;
  const double loss = sequence_nll(logits, seq, &d);
  for (double& x : d.values()) x *= weight;
  backward(model, trace, d, grads);
  return loss;
}

std::size_t classes_present(const LabeledCorpus& corpus) {
  std::vector<bool> seen(corpus.num_classes, false);
  for (const auto& e : corpus.examples) {
    if (e.label < seen.size()) seen[e.label] = true;
  }
  return static_cast<std::size_t>(std::count(seen.begin(), seen.end(), true));
}

// Per-class NLL of the full sequence (EOS included) and content log-likelihood (EOS excluded).
struct ClassScores {
  std::vector<double> nll;
  std::vector<double> content_log_likelihood;
};

ClassScores cclm_class_scores(const Model& model, const LabeledExample& e) {
  const std::size_t classes = model.config().num_classes;
  ClassScores s;
  for (std::size_t c = 0; c < classes; ++c) {
    const LmSequence seq = conditioned(e, model.config(), c);
    const Matrix logits = forward_full(model, seq.tokens);
    s.nll.push_back(sequence_nll(logits, seq));
    double ll = 0.0;
    for (std::size_t i = 1; i + 1 < seq.tokens.size(); ++i) {
      ll += log_softmax(logits.row(i))[static_cast<std::size_t>(seq.tokens[i + 1])];
    }
    s.content_log_likelihood.push_back(ll);
  }
  return s;
}

}  // namespace

TrainResult train_lm(std::span<const LmSequence> train, std::span<const LmSequence> validation,
                     const ModelConfig& architecture, const TrainConfig& config, const EpochCallback& on_epoch) {
  if (architecture.head_kind != HeadKind::lm || architecture.mask_mode != MaskMode::causal) {
    throw ConfigurationError("train_lm needs a causal lm-head architecture");
  }
  ExampleStep step = [&](const Model& m, std::size_t i, Rng&, std::span<double> g, double w) {
    return lm_example(m, train[i], g, w);
  };
  Evaluate evaluate;
  if (!validation.empty()) {
    evaluate = [&](const Model& m) {
      const auto [total, count] = corpus_nll(m, validation);
      EpochMetrics row;
      row.loss = total / static_cast<double>(count);
      row.perplexity = std::exp(row.loss);
      return row;
    };
  }
  return run_training(Model::initialize(architecture, config.seed), train.size(), config, step, evaluate, on_epoch);
}

double classification_accuracy(const Model& model, const LabeledCorpus& corpus) {
  if (corpus.examples.empty()) throw ValidationError("cannot measure accuracy on an empty corpus");
  std::size_t correct = 0;
  for (const auto& e : corpus.examples) {
    std::size_t predicted;
    if (model.config().head_kind == HeadKind::classifier) {
      const Matrix logits = forward_full(model, e.tokens);
      const auto row = logits.row(0);
      predicted = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    } else {
      const ClassScores s = cclm_class_scores(model, e);
      predicted = static_cast<std::size_t>(
          std::max_element(s.content_log_likelihood.begin(), s.content_log_likelihood.end()) -
          s.content_log_likelihood.begin());
    }
    correct += predicted == e.label;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(corpus.examples.size());
}

TrainResult train_discriminator(const LabeledCorpus& train, const LabeledCorpus& validation,
                                const ModelConfig& architecture, const TrainConfig& config,
                                const EpochCallback& on_epoch) {
  if (architecture.head_kind != HeadKind::classifier) throw ConfigurationError("discriminator needs a classifier head");
  if (classes_present(train) < 2) throw ValidationError("discriminator training needs at least two classes");
  ExampleStep step = [&](const Model& m, std::size_t i, Rng& rng, std::span<double> g, double w) {
    const LabeledExample ex = sample_training_prefix(train.examples[i], rng);
    ForwardTrace trace;
    const Matrix logits = forward_train(m, ex.tokens, trace);
    const auto row = logits.row(0);
    const double loss = cross_entropy(row, ex.label);
    Matrix d(1, row.size());
    const std::vector<double> p = softmax(row);
    for (std::size_t c = 0; c < p.size(); ++c) d(0, c) = w * (p[c] - (c == ex.label ? 1.0 : 0.0));
    backward(m, trace, d, g);
    return loss;
  };
  Evaluate evaluate;
  if (!validation.examples.empty()) {
    evaluate = [&](const Model& m) {
      EpochMetrics row;
      std::size_t correct = 0;
      for (const auto& e : validation.examples) {
        const Matrix logits = forward_full(m, e.tokens);
        const auto r = logits.row(0);
        row.loss += cross_entropy(r, e.label);
        correct += static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin()) == e.label;
      }
      const auto n = static_cast<double>(validation.examples.size());
      row.loss /= n;
      row.accuracy = 100.0 * static_cast<double>(correct) / n;
      return row;
    };
  }
  return run_training(Model::initialize(architecture, config.seed), train.examples.size(), config, step, evaluate,
                      on_epoch);
}

TrainResult train_cclm(const LabeledCorpus& train, const LabeledCorpus& validation, const ModelConfig& architecture,
                       const TrainConfig& config, const EpochCallback& on_epoch) {
  if (!architecture.class_conditional() || architecture.num_classes != train.num_classes) {
    throw ConfigurationError("class-conditional LM needs one control token per corpus class");
  }
  config.validate();
  const std::size_t classes = architecture.num_classes;
  ExampleStep step = [&](const Model& m, std::size_t i, Rng&, std::span<double> g, double w) {
    const LabeledExample& e = train.examples[i];
    if (config.lambda == 1.0) return lm_example(m, conditioned(e, m.config(), e.label), g, w);
    std::vector<ForwardTrace> traces(classes);
    std::vector<Matrix> d(classes);
    std::vector<double> losses(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      const LmSequence seq = conditioned(e, m.config(), c);
      losses[c] = sequence_nll(forward_train(m, seq.tokens, traces[c]), seq, &d[c]);
    }
    const std::vector<double> gl = joint_loss_gradient(losses, e.label, config.lambda);
    for (std::size_t c = 0; c < classes; ++c) {
      if (gl[c] == 0.0) continue;
      for (double& x : d[c].values()) x *= w * gl[c];
      backward(m, traces[c], d[c], g);
    }
    return joint_loss(losses, e.label, config.lambda);
  };
  Evaluate evaluate;
  if (!validation.examples.empty()) {
    evaluate = [&](const Model& m) {
      EpochMetrics row;
      std::size_t correct = 0;
      for (const auto& e : validation.examples) {
        const ClassScores s = cclm_class_scores(m, e);
        row.loss += joint_loss(s.nll, e.label, config.lambda);
        const auto best = static_cast<std::size_t>(
            std::max_element(s.content_log_likelihood.begin(), s.content_log_likelihood.end()) -
            s.content_log_likelihood.begin());
        correct += best == e.label;
      }
      const auto n = static_cast<double>(validation.examples.size());
      row.loss /= n;
      row.accuracy = 100.0 * static_cast<double>(correct) / n;
      return row;
    };
  }
  return run_training(Model::initialize(architecture, config.seed), train.examples.size(), config, step, evaluate,
                      on_epoch);
}

ModelConfig lm_architecture(const ModelConfig& backbone, const Vocabulary& vocab) {
  ModelConfig cfg = backbone;
  cfg.vocab_size = vocab.size();
  cfg.head_kind = HeadKind::lm;
  cfg.num_classes = 0;
  cfg.num_control_tokens = 0;
  cfg.mask_mode = MaskMode::causal;
  cfg.alphabet = vocab.alphabet_utf8();
  return cfg;
}

ModelConfig classifier_architecture(const ModelConfig& backbone, const Vocabulary& vocab, std::size_t num_classes,
                                    MaskMode mask) {
  ModelConfig cfg = lm_architecture(backbone, vocab);
  cfg.head_kind = HeadKind::classifier;
  cfg.num_classes = num_classes;
  cfg.mask_mode = mask;
  return cfg;
}

ModelConfig cclm_architecture(const ModelConfig& backbone, const Vocabulary& vocab, std::size_t num_classes) {
  ModelConfig cfg = lm_architecture(backbone, vocab);
  cfg.vocab_size += num_classes;
  cfg.num_classes = num_classes;
  cfg.num_control_tokens = num_classes;
  cfg.max_positions = std::max(cfg.max_positions, kMaxSequenceLength + 1);
  return cfg;
}

void write_metrics_csv(const std::filesystem::path& path, std::span<const EpochMetrics> metrics) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,split,loss,accuracy,perplexity\n";
  out.precision(10);
  for (const auto& m : metrics) {
    out << m.epoch << ',' << m.split << ',' << m.loss << ',';
    if (m.accuracy) out << *m.accuracy;
    out << ',';
    if (m.perplexity) out << *m.perplexity;
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace coopgen
