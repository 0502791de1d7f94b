// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include "coopgen/evaluation.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "coopgen/errors.hpp"
#include "coopgen/numerics.hpp"
#include "json.hpp"

namespace coopgen {

std::vector<CurvePoint> accuracy_vs_length(const Discriminator& discriminator, const LabeledCorpus& corpus,
                                           std::span<const std::size_t> lengths) {
  if (corpus.examples.empty()) throw ValidationError("accuracy curve needs a non-empty corpus");
  if (lengths.empty()) throw ValidationError("accuracy curve needs at least one length");
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    if (lengths[i] == 0 || (i > 0 && lengths[i] <= lengths[i - 1])) {
      throw ValidationError("probe lengths must be positive and strictly ascending");
    }
  }
  std::vector<std::size_t> correct(lengths.size(), 0);
  for (const auto& ex : corpus.examples) {
    const std::size_t content = ex.tokens.size() - 1;
    if (content == 0) throw ValidationError("corpus example without content tokens");
    std::size_t last_k = 0;
    bool last_correct = false;
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      const std::size_t k = std::min(lengths[i], content);
      if (k != last_k) {
        const std::span<const TokenId> prefix(ex.tokens.data(), k + 1);
        last_correct = discriminator.classify(prefix).argmax() == ex.label;
        last_k = k;
      }
      correct[i] += last_correct;
    }
  }
  std::vector<CurvePoint> curve;
  const auto n = static_cast<double>(corpus.examples.size());
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    curve.push_back({lengths[i], 100.0 * static_cast<double>(correct[i]) / n});
  }
  return curve;
}

void write_curve_csv(const std::filesystem::path& path, std::span<const CurvePoint> curve) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(10);
  out << "length,accuracy\n";
  for (const auto& p : curve) out << p.length << ',' << p.accuracy << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<TokenId> content_tokens(const Sample& sample) {
  auto begin = sample.tokens.begin();
  auto end = sample.tokens.end();
  if (begin != end && *begin == kBos) ++begin;
  if (begin != end && *(end - 1) == kEos) --end;
  return {begin, end};
}

namespace {

void require_alphabet(const SampleSet& samples, const std::string& model_alphabet, std::string_view who) {
  if (samples.alphabet != model_alphabet) {
    throw ConfigurationError(std::string(who) + " vocabulary does not match the samples' vocabulary");
  }
}

TokenSequence scored_sequence(const Sample& sample) {
  TokenSequence seq{kBos};
  const auto content = content_tokens(sample);
  seq.insert(seq.end(), content.begin(), content.end());
  return seq;
}

}  // namespace

OracleJudgement oracle_judge(const SampleSet& samples, const Discriminator& oracle) {
  if (samples.samples.empty()) throw ValidationError("no samples to judge");
  require_alphabet(samples, oracle.alphabet(), "oracle classifier");
  const std::size_t classes = oracle.num_classes();
  OracleJudgement j;
  std::vector<std::size_t> hits(classes, 0), totals(classes, 0);
  std::size_t correct = 0;
  for (const auto& s : samples.samples) {
    if (s.target_class >= classes) throw ConfigurationError("sample target class outside the oracle's classes");
    const ClassPosterior p = oracle.classify(scored_sequence(s));
    const bool ok = p.argmax() == s.target_class;
    j.target_probability.push_back(p.probs[s.target_class]);
    j.correct.push_back(ok);
    correct += ok;
    hits[s.target_class] += ok;
    ++totals[s.target_class];
  }
  j.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(samples.samples.size());
  for (std::size_t c = 0; c < classes; ++c) {
    if (totals[c] == 0) {
      j.per_class.emplace_back();
    } else {
      j.per_class.emplace_back(100.0 * static_cast<double>(hits[c]) / static_cast<double>(totals[c]));
    }
  }
  return j;
}

double oracle_accuracy(const SampleSet& samples, const Discriminator& oracle) {
  return oracle_judge(samples, oracle).accuracy;
}

namespace {

using NgramCounts = std::map<std::vector<TokenId>, std::size_t>;

NgramCounts count_ngrams(const std::vector<TokenId>& seq, std::size_t n) {
  NgramCounts counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[std::vector<TokenId>(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

}  // namespace

double self_bleu(std::span<const std::vector<TokenId>> sequences, std::size_t max_n) {
  if (sequences.size() < 2) throw ValidationError("Self-BLEU needs at least two samples");
  if (max_n == 0) throw ValidationError("BLEU needs n-gram order >= 1");
  // counts[s][n-1]: n-gram counts of sequence s.
  std::vector<std::vector<NgramCounts>> counts(sequences.size());
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    for (std::size_t n = 1; n <= max_n; ++n) counts[s].push_back(count_ngrams(sequences[s], n));
  }
  double total = 0.0;
  for (std::size_t h = 0; h < sequences.size(); ++h) {
    double log_sum = 0.0;
    bool zero = false;
    for (std::size_t n = 1; n <= max_n && !zero; ++n) {
      std::size_t matched = 0, possible = 0;
      for (const auto& [gram, count] : counts[h][n - 1]) {
        std::size_t best = 0;
        for (std::size_t r = 0; r < sequences.size(); ++r) {
          if (r == h) continue;
          const auto it = counts[r][n - 1].find(gram);
          if (it != counts[r][n - 1].end()) best = std::max(best, it->second);
        }
        matched += std::min(count, best);
        possible += count;
      }
      if (matched == 0) {
        zero = true;
      } else {
        log_sum += std::log(static_cast<double>(matched) / static_cast<double>(possible));
      }
    }
    if (zero) continue;
    // Closest reference length; ties go to the shorter reference.
    const std::size_t c = sequences[h].size();
    std::size_t r_len = 0;
    std::size_t best_gap = SIZE_MAX;
    for (std::size_t r = 0; r < sequences.size(); ++r) {
      if (r == h) continue;
      const std::size_t len = sequences[r].size();
      const std::size_t gap = len > c ? len - c : c - len;
      if (gap < best_gap || (gap == best_gap && len < r_len)) {
        best_gap = gap;
        r_len = len;
      }
    }
    const double bp = c > r_len ? 1.0 : std::exp(1.0 - static_cast<double>(r_len) / static_cast<double>(c));
    total += bp * std::exp(log_sum / static_cast<double>(max_n));
  }
  return total / static_cast<double>(sequences.size());
}

double self_bleu(const SampleSet& samples, std::size_t max_n) {
  std::vector<std::vector<TokenId>> seqs;
  seqs.reserve(samples.samples.size());
  for (const auto& s : samples.samples) seqs.push_back(content_tokens(s));
  return self_bleu(seqs, max_n);
}

double oracle_perplexity(const SampleSet& samples, const LanguageModel& oracle_lm) {
  if (samples.samples.empty()) throw ValidationError("no samples to score");
  require_alphabet(samples, oracle_lm.alphabet(), "oracle LM");
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples.samples) {
    const TokenSequence seq = scored_sequence(s);
    const LmContextPtr ctx = oracle_lm.start(seq);
    nll -= ctx->log_likelihood + log_softmax(ctx->next_logits)[kEos];
    count += seq.size();  // content tokens plus EOS
  }
  return std::exp(nll / static_cast<double>(count));
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw ValidationError("Welch's t-test needs at least two values per group");
  auto moments = [](std::span<const double> x) {
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= n;
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / (n - 1.0)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double sa = va / static_cast<double>(a.size());
  const double sb = vb / static_cast<double>(b.size());
  if (sa + sb == 0.0) throw UndefinedTestError("both groups have zero variance");
  WelchResult r;
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.degrees_of_freedom = (sa + sb) * (sa + sb) /
                         (sa * sa / static_cast<double>(a.size() - 1) + sb * sb / static_cast<double>(b.size() - 1));
  const boost::math::students_t dist(r.degrees_of_freedom);
  r.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json doc;
  doc["label"] = label;
  doc["sample_count"] = sample_count;
  doc["accuracy"] = accuracy;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::array();
  for (const auto& a : per_class_accuracy) per_class.push_back(a ? nlohmann::ordered_json(*a) : nullptr);
  doc["per_class_accuracy"] = per_class;
  doc["self_bleu_5"] = self_bleu_5 ? nlohmann::ordered_json(*self_bleu_5) : nullptr;
  doc["oracle_perplexity"] = oracle_perplexity;
  nlohmann::ordered_json s = nlohmann::ordered_json::object();
  for (const auto& [k, v] : settings) s[k] = v;
  doc["settings"] = s;
  return doc.dump(2);
}

std::string EvalReport::csv_header() const {
  std::string h = "label,sample_count,accuracy,self_bleu_5,oracle_perplexity";
  for (std::size_t c = 0; c < per_class_accuracy.size(); ++c) h += ",accuracy_class_" + std::to_string(c);
  return h;
}

std::string EvalReport::csv_row() const {
  std::ostringstream out;
  out.precision(10);
  out << label << ',' << sample_count << ',' << accuracy << ',';
  if (self_bleu_5) out << *self_bleu_5;
  out << ',' << oracle_perplexity;
  for (const auto& a : per_class_accuracy) {
    out << ',';
    if (a) out << *a;
  }
  return out.str();
}

EvalReport evaluate_samples(const SampleSet& samples, const Discriminator& oracle, const LanguageModel& oracle_lm,
                            std::string label) {
  const OracleJudgement j = oracle_judge(samples, oracle);
  EvalReport r;
  r.label = std::move(label);
  r.accuracy = j.accuracy;
  r.per_class_accuracy = j.per_class;
  if (samples.samples.size() >= 2) r.self_bleu_5 = self_bleu(samples, 5);
  r.oracle_perplexity = oracle_perplexity(samples, oracle_lm);
  r.sample_count = samples.samples.size();
  return r;
}

}  // namespace coopgen
