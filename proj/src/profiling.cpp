// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include "coopgen/profiling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "coopgen/errors.hpp"
#include "coopgen/rng.hpp"

namespace coopgen {

std::string family_tag(const Discriminator* discriminator) {
  return discriminator == nullptr ? "none" : std::string(family_name(discriminator->family()));
}

ProfileRun profile_generation(const LanguageModel& lm, const Discriminator* discriminator,
                              const SearchParams& params, std::span<const TokenSequence> prompts,
                              std::size_t num_batches, std::size_t batch_size, std::uint64_t seed,
                              std::size_t threads) {
  const std::size_t classes = discriminator == nullptr ? 1 : discriminator->num_classes();
  Rng rng(mix_seed(seed, 2));
  const TokenSequence bos_only{kBos};
  ProfileRun run;
  // Summed per step before averaging.
  std::vector<CostCounters> sums;
  std::vector<double> wall;
  std::vector<std::size_t> reached;
  for (std::size_t b = 0; b < num_batches; ++b) {
    std::vector<BatchItem> items(batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) {
      items[i].prompt = prompts.empty() ? bos_only : prompts[uniform_index(rng, prompts.size())];
      items[i].target_class = (b * batch_size + i) % classes;
    }
    std::vector<GenerationResult> results = generate_batch(items, lm, discriminator, params, threads);
    for (GenerationResult& r : results) {
      run.discriminator_total += r.total.discriminator;
      run.discriminator_setup += r.setup.discriminator;
      run.lm_total += r.total.lm;
      for (const StepRecord& s : r.steps) {
        if (s.step >= sums.size()) {
          sums.resize(s.step + 1);
          wall.resize(s.step + 1, 0.0);
          reached.resize(s.step + 1, 0);
        }
        sums[s.step] += s.stats.discriminator;
        wall[s.step] += s.wall_seconds;
        reached[s.step] += 1;
      }
      run.generations.push_back(std::move(r));
    }
  }
  const std::string tag = family_tag(discriminator);
  for (std::size_t t = 0; t < sums.size(); ++t) {
    if (reached[t] == 0) continue;
    const auto n = static_cast<double>(reached[t]);
    StepCostRecord rec;
    rec.step = t;
    rec.family = tag;
    rec.forward_passes = static_cast<double>(sums[t].forward_passes) / n;
    rec.attention_scores = static_cast<double>(sums[t].attention_scores) / n;
    rec.tokens_scored = static_cast<double>(sums[t].tokens_scored) / n;
    rec.wall_seconds = wall[t] / n;
    rec.c_puct = params.c_puct;
    rec.iterations = params.iterations_per_token;
    rec.sequences = reached[t];
    run.records.push_back(std::move(rec));
  }
  return run;
}

double polynomial_fit_r_squared(std::span<const double> x, std::span<const double> y, std::size_t degree) {
  if (x.size() != y.size()) throw ValidationError("fit needs as many x as y values");
  const std::size_t k = degree + 1;
  if (x.size() <= k) throw ValidationError("fit needs more points than coefficients");
  // Normal equations on x rescaled to [-1, 1] for conditioning.
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double mid = (*hi + *lo) / 2.0;
  const double half = *hi > *lo ? (*hi - *lo) / 2.0 : 1.0;
  std::vector<double> a(k * (k + 1), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = (x[i] - mid) / half;
    std::vector<double> pw(k, 1.0);
    for (std::size_t j = 1; j < k; ++j) pw[j] = pw[j - 1] * u;
    for (std::size_t r = 0; r < k; ++r) {
      for (std::size_t c = 0; c < k; ++c) a[r * (k + 1) + c] += pw[r] * pw[c];
      a[r * (k + 1) + k] += pw[r] * y[i];
    }
  }
  for (std::size_t col = 0; col < k; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < k; ++r) {
      if (std::abs(a[r * (k + 1) + col]) > std::abs(a[pivot * (k + 1) + col])) pivot = r;
    }
    if (a[pivot * (k + 1) + col] == 0.0) throw ValidationError("fit is singular (too few distinct x values)");
    for (std::size_t c = 0; c <= k; ++c) std::swap(a[col * (k + 1) + c], a[pivot * (k + 1) + c]);
    for (std::size_t r = 0; r < k; ++r) {
      if (r == col) continue;
      const double f = a[r * (k + 1) + col] / a[col * (k + 1) + col];
      for (std::size_t c = col; c <= k; ++c) a[r * (k + 1) + c] -= f * a[col * (k + 1) + c];
    }
  }
  std::vector<double> coef(k);
  for (std::size_t r = 0; r < k; ++r) coef[r] = a[r * (k + 1) + k] / a[r * (k + 1) + r];
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double u = (x[i] - mid) / half;
    double fit = 0.0;
    for (std::size_t j = k; j-- > 0;) fit = fit * u + coef[j];
    ss_res += (y[i] - fit) * (y[i] - fit);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

std::vector<AccountingRow> forward_pass_accounting(const LanguageModel& lm,
                                                   std::span<const Discriminator* const> discriminators,
                                                   const SearchParams& params, std::span<const double> sweep,
                                                   std::span<const TokenSequence> prompts, std::size_t sequences,
                                                   std::uint64_t seed, std::size_t threads) {
  std::vector<AccountingRow> rows;
  if (sequences == 0) return rows;
  const auto n = static_cast<double>(sequences);
  for (const double c : sweep) {
    SearchParams p = params;
    p.c_puct = c;
    for (const Discriminator* disc : discriminators) {
      const ProfileRun run = profile_generation(lm, disc, p, prompts, 1, sequences, seed, threads);
      SearchStats total;
      for (const auto& g : run.generations) total += g.total;
      AccountingRow row;
      row.c_puct = c;
      row.family = family_tag(disc);
      row.forward_passes = static_cast<double>(total.discriminator.forward_passes) / n;
      row.attention_scores = static_cast<double>(total.discriminator.attention_scores) / n;
      row.width = total.width();
      row.parents_scored = static_cast<double>(total.parents_scored) / n;
      row.evaluated_children = static_cast<double>(total.evaluated_children) / n;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

namespace {

constexpr const char* kCostHeader = "step,family,forward_passes,attention_scores,wall_seconds,c_puct,iterations";

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

void write_cost_rows(std::ostream& out, std::span<const StepCostRecord> records) {
  out << kCostHeader << '\n';
  for (const auto& r : records) {
    out << r.step << ',' << r.family << ',' << r.forward_passes << ',' << r.attention_scores << ','
        << r.wall_seconds << ',' << r.c_puct << ',' << r.iterations << '\n';
  }
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

template <typename T>
T parse_number(const std::string& text, std::size_t line_no) {
  try {
    std::size_t used = 0;
    T value;
    if constexpr (std::is_same_v<T, double>) {
      value = std::stod(text, &used);
    } else {
      if (!text.empty() && text.front() == '-') throw std::invalid_argument("negative");
      value = static_cast<T>(std::stoull(text, &used));
    }
    if (used != text.size()) throw std::invalid_argument("trailing characters");
    return value;
  } catch (const std::exception&) {
    throw DataError("cost CSV line " + std::to_string(line_no) + ": bad number '" + text + "'");
  }
}

}  // namespace

void emit_cost_csv(std::span<const StepCostRecord> records, const std::filesystem::path& path) {
  if (records.empty()) throw ValidationError("no cost records to write");
  std::ofstream out = open_output(path);
  write_cost_rows(out, records);
  finish(out, path);
}

std::vector<StepCostRecord> parse_cost_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCostHeader) throw DataError("unexpected cost CSV header in " + path.string());
  std::vector<StepCostRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_fields(line);
    if (f.size() != 7) throw DataError("cost CSV line " + std::to_string(line_no) + " has " + std::to_string(f.size()) + " fields");
    StepCostRecord r;
    r.step = parse_number<std::size_t>(f[0], line_no);
    r.family = f[1];
    r.forward_passes = parse_number<double>(f[2], line_no);
    r.attention_scores = parse_number<double>(f[3], line_no);
    r.wall_seconds = parse_number<double>(f[4], line_no);
    r.c_puct = parse_number<double>(f[5], line_no);
    r.iterations = parse_number<std::size_t>(f[6], line_no);
    records.push_back(std::move(r));
  }
  return records;
}

void write_accounting_csv(std::span<const AccountingRow> rows, const std::filesystem::path& path) {
  std::ofstream out = open_output(path);
  out << "c_puct,family,forward_passes,attention_scores,width,parents_scored,evaluated_children\n";
  for (const auto& r : rows) {
    out << r.c_puct << ',' << r.family << ',' << r.forward_passes << ',' << r.attention_scores << ',' << r.width
        << ',' << r.parents_scored << ',' << r.evaluated_children << '\n';
  }
  finish(out, path);
}

std::vector<std::filesystem::path> write_plot_data(const std::filesystem::path& dir, const PlotData& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::vector<std::filesystem::path> written;
  if (!data.accuracy_curves.empty()) {
    const auto path = dir / "fig1_accuracy_vs_length.csv";
    std::ofstream out = open_output(path);
    out << "family,length,accuracy\n";
    for (const auto& curve : data.accuracy_curves) {
      for (const auto& p : curve.points) out << curve.family << ',' << p.length << ',' << p.accuracy << '\n';
    }
    finish(out, path);
    written.push_back(path);
  }
  if (!data.step_costs.empty()) {
    const auto path = dir / "fig2_step_cost.csv";
    emit_cost_csv(data.step_costs, path);
    written.push_back(path);
  }
  if (!data.quality.empty()) {
    const auto path = dir / "table1_quality.csv";
    std::ofstream out = open_output(path);
    std::size_t widest = 0;
    for (std::size_t i = 1; i < data.quality.size(); ++i) {
      if (data.quality[i].per_class_accuracy.size() > data.quality[widest].per_class_accuracy.size()) widest = i;
    }
    out << data.quality[widest].csv_header() << '\n';
    for (const auto& r : data.quality) out << r.csv_row() << '\n';
    finish(out, path);
    written.push_back(path);
  }
  return written;
}

}  // namespace coopgen
