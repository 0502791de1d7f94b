// Copyright (c) 2026, coopgen contributors
// SPDX-License-Identifier: Apache-2.0

#include "coopgen/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "coopgen/errors.hpp"
#include "json.hpp"

namespace coopgen {

using nlohmann::ordered_json;

std::string_view model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::lm: return "lm";
    case ModelKind::disc_bi: return "disc-bi";
    case ModelKind::disc_uni: return "disc-uni";
    case ModelKind::cclm: return "cclm";
    case ModelKind::oracle_lm: return "oracle-lm";
    case ModelKind::oracle_disc: return "oracle-disc";
  }
  return "?";
}

ModelKind parse_model_kind(std::string_view name) {
  for (ModelKind k : kAllModelKinds) {
    if (model_kind_name(k) == name) return k;
  }
  throw ValidationError("unknown model kind '" + std::string(name) +
                        "' (expected lm, disc-bi, disc-uni, cclm, oracle-lm or oracle-disc)");
}

// ---------------------------------------------------------------------------
// RunConfig serialization

namespace {

ordered_json train_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"gradient_accumulation", t.gradient_accumulation},
          {"learning_rate", t.learning_rate},
          {"weight_decay", t.weight_decay},
          {"lambda", t.lambda}};
}

// Typed access to one JSON object; finish() rejects keys nobody asked for.
class Reader {
 public:
  Reader(const nlohmann::json& obj, std::string where) : obj_(obj), where_(std::move(where)) {
    if (!obj_.is_object()) throw ValidationError(where_ + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!it->is_number_unsigned()) throw ValidationError("expected a non-negative integer");
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ValidationError("expected true or false");
      }
      out = it->template get<T>();
    } catch (const std::exception& e) {
      throw ValidationError(where_ + "." + key + ": " + e.what());
    }
  }

  const nlohmann::json* child(const char* key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) throw ValidationError("unknown key " + where_ + "." + key);
    }
  }

 private:
  const nlohmann::json& obj_;
  std::string where_;
  std::set<std::string> seen_;
};

void read_train(const nlohmann::json& j, const std::string& where, TrainConfig& t) {
  Reader r(j, where);
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("gradient_accumulation", t.gradient_accumulation);
  r.get("learning_rate", t.learning_rate);
  r.get("weight_decay", t.weight_decay);
  r.get("lambda", t.lambda);
  r.finish();
}

}  // namespace

TrainConfig RunConfig::train_config(ModelKind kind) const {
  TrainConfig t = train;
  for (const auto& [k, override_cfg] : train_overrides) {
    if (k == kind) t = override_cfg;
  }
  t.seed = mix_seed(seed, 100 + static_cast<std::uint64_t>(kind));
  return t;
}

std::filesystem::path RunConfig::checkpoint_path(ModelKind kind) const {
  return output_dir / "checkpoints" / (std::string(model_kind_name(kind)) + ".ckpt");
}

std::filesystem::path RunConfig::metrics_path(ModelKind kind) const {
  return output_dir / "metrics" / (std::string(model_kind_name(kind)) + ".csv");
}

std::string RunConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["data_dir"] = data_dir.string();
  j["output_dir"] = output_dir.string();
  j["model"] = {{"layers", backbone.num_layers},
                {"hidden", backbone.hidden_size},
                {"heads", backbone.num_heads},
                {"max_positions", backbone.max_positions}};
  j["train"] = train_json(train);
  ordered_json overrides = ordered_json::object();
  for (const auto& [kind, t] : train_overrides) overrides[std::string(model_kind_name(kind))] = train_json(t);
  j["train_overrides"] = overrides;
  j["search"] = {{"c_puct", search.c_puct},
                 {"tau", search.tau},
                 {"iterations", search.iterations_per_token},
                 {"max_length", search.max_length},
                 {"allow_eos", search.allow_eos},
                 {"reuse_subtree", search.reuse_subtree},
                 {"max_backup", search.max_backup},
                 {"mixing_exponent", search.mixing_exponent}};
  j["generation"] = {{"samples_per_class", generation.samples_per_class},
                     {"prompt_max_length", generation.prompt_max_length},
                     {"threads", generation.threads}};
  j["bench"] = {{"families", bench.families},
                {"num_batches", bench.num_batches},
                {"batch_size", bench.batch_size},
                {"max_steps", bench.max_steps},
                {"allow_eos", bench.allow_eos},
                {"c_puct_sweep", bench.c_puct_sweep},
                {"accounting_sequences", bench.accounting_sequences},
                {"probe_lengths", bench.probe_lengths},
                {"threads", bench.threads}};
  return j.dump(2);
}

RunConfig RunConfig::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what(), 0);
  }
  RunConfig c;
  Reader r(j, "config");
  r.get("seed", c.seed);
  std::string path;
  r.get("data_dir", path);
  c.data_dir = path;
  path.clear();
  r.get("output_dir", path);
  c.output_dir = path;
  if (const auto* m = r.child("model")) {
    Reader mr(*m, "model");
    mr.get("layers", c.backbone.num_layers);
    mr.get("hidden", c.backbone.hidden_size);
    mr.get("heads", c.backbone.num_heads);
    mr.get("max_positions", c.backbone.max_positions);
    mr.finish();
  }
  if (const auto* t = r.child("train")) read_train(*t, "train", c.train);
  if (const auto* o = r.child("train_overrides")) {
    Reader or_(*o, "train_overrides");
    for (ModelKind k : kAllModelKinds) {
      const std::string name(model_kind_name(k));
      if (const auto* t = or_.child(name.c_str())) {
        TrainConfig cfg = c.train;
        read_train(*t, "train_overrides." + name, cfg);
        c.train_overrides.emplace_back(k, cfg);
      }
    }
    or_.finish();
  }
  if (const auto* s = r.child("search")) {
    Reader sr(*s, "search");
    sr.get("c_puct", c.search.c_puct);
    sr.get("tau", c.search.tau);
    sr.get("iterations", c.search.iterations_per_token);
    sr.get("max_length", c.search.max_length);
    sr.get("allow_eos", c.search.allow_eos);
    sr.get("reuse_subtree", c.search.reuse_subtree);
    sr.get("max_backup", c.search.max_backup);
    sr.get("mixing_exponent", c.search.mixing_exponent);
    sr.finish();
  }
  if (const auto* g = r.child("generation")) {
    Reader gr(*g, "generation");
    gr.get("samples_per_class", c.generation.samples_per_class);
    gr.get("prompt_max_length", c.generation.prompt_max_length);
    gr.get("threads", c.generation.threads);
    gr.finish();
  }
  if (const auto* b = r.child("bench")) {
    Reader br(*b, "bench");
    br.get("families", c.bench.families);
    br.get("num_batches", c.bench.num_batches);
    br.get("batch_size", c.bench.batch_size);
    br.get("max_steps", c.bench.max_steps);
    br.get("allow_eos", c.bench.allow_eos);
    br.get("c_puct_sweep", c.bench.c_puct_sweep);
    br.get("accounting_sequences", c.bench.accounting_sequences);
    br.get("probe_lengths", c.bench.probe_lengths);
    br.get("threads", c.bench.threads);
    br.finish();
  }
  r.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("config file " + path.string() + " not found");
  std::stringstream buf;
  buf << in.rdbuf();
  return RunConfig::from_json(buf.str());
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

void ensure_dir(const std::filesystem::path& dir) {
  if (dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::shared_ptr<const Model> load_model(const RunConfig& config, ModelKind kind) {
  const auto path = config.checkpoint_path(kind);
  if (!std::filesystem::exists(path)) {
    throw ConfigurationError("missing " + std::string(model_kind_name(kind)) + " checkpoint " + path.string() +
                             " (run `coopgen train " + std::string(model_kind_name(kind)) + "` first)");
  }
  return std::make_shared<const Model>(load_checkpoint(path));
}

Dataset require_dataset(const RunConfig& config) {
  if (config.data_dir.empty()) throw ConfigurationError("no dataset directory configured (data_dir)");
  if (!std::filesystem::exists(config.data_dir / kMetadataFileName)) {
    throw ConfigurationError("dataset " + config.data_dir.string() + " not found (no " +
                             std::string(kMetadataFileName) + ")");
  }
  return load_dataset(config.data_dir);
}

ModelKind family_checkpoint(Family family) {
  switch (family) {
    case Family::bidirectional: return ModelKind::disc_bi;
    case Family::unidirectional: return ModelKind::disc_uni;
    case Family::generative: return ModelKind::cclm;
  }
  return ModelKind::disc_bi;
}

// nullptr for the "none" family.
std::unique_ptr<Discriminator> load_guide(const RunConfig& config, std::string_view family) {
  if (family == "none") return nullptr;
  return make_discriminator(load_model(config, family_checkpoint(parse_family(family))));
}

std::string canonical_family(std::string_view family) {
  if (family == "none") return "none";
  return std::string(family_name(parse_family(family)));
}

// A prompt is BOS plus the first 1..max_length characters of a test text.
TokenSequence sample_prompt(const LabeledCorpus& test, std::size_t max_length, Rng& rng) {
  if (max_length == 0 || test.examples.empty()) return {kBos};
  const auto& ex = test.examples[uniform_index(rng, test.examples.size())];
  const std::size_t len = 1 + uniform_index(rng, max_length);
  const std::size_t take = std::min(len, ex.tokens.size() - 1);
  return TokenSequence(ex.tokens.begin(), ex.tokens.begin() + static_cast<std::ptrdiff_t>(take + 1));
}


void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

std::vector<TokenSequence> prompt_pool(const LabeledCorpus& test, std::size_t max_length) {
  std::set<TokenSequence> distinct;
  if (max_length == 0) return {};
  for (const auto& ex : test.examples) {
    for (std::size_t k = 1; k <= max_length && k < ex.tokens.size(); ++k) {
      distinct.emplace(ex.tokens.begin(), ex.tokens.begin() + static_cast<std::ptrdiff_t>(k + 1));
    }
  }
  return {distinct.begin(), distinct.end()};
}

// ---------------------------------------------------------------------------
// Commands

std::filesystem::path cmd_make_data(std::string_view spec, std::uint64_t seed, const std::filesystem::path& out_dir,
                                    const SplitSizes& sizes) {
  const SyntheticKind kind = parse_synthetic_kind(spec);
  write_dataset(out_dir, make_synthetic(kind, seed, sizes));
  return out_dir;
}

TrainOutput cmd_train(const RunConfig& config, ModelKind kind, const EpochCallback& on_epoch) {
  const Dataset ds = require_dataset(config);
  const TrainConfig tc = config.train_config(kind);
  const std::size_t classes = ds.metadata.num_classes;
  TrainResult result;
  switch (kind) {
    case ModelKind::lm:
    case ModelKind::oracle_lm: {
      const LabeledCorpus& train = kind == ModelKind::lm ? ds.train : ds.oracle_train;
      const auto tr = lm_sequences(train);
      const auto va = lm_sequences(ds.validation);
      result = train_lm(tr, va, lm_architecture(config.backbone, ds.vocab), tc, on_epoch);
      break;
    }
    case ModelKind::disc_bi:
    case ModelKind::oracle_disc:
      result = train_discriminator(kind == ModelKind::disc_bi ? ds.train : ds.oracle_train, ds.validation,
                                   classifier_architecture(config.backbone, ds.vocab, classes, MaskMode::bidirectional),
                                   tc, on_epoch);
      break;
    case ModelKind::disc_uni:
      result = train_discriminator(ds.train, ds.validation,
                                   classifier_architecture(config.backbone, ds.vocab, classes, MaskMode::causal), tc,
                                   on_epoch);
      break;
    case ModelKind::cclm:
      result = train_cclm(ds.train, ds.validation, cclm_architecture(config.backbone, ds.vocab, classes), tc, on_epoch);
      break;
  }
  TrainOutput out;
  out.checkpoint = config.checkpoint_path(kind);
  out.metrics = config.metrics_path(kind);
  ensure_dir(out.checkpoint.parent_path());
  ensure_dir(out.metrics.parent_path());
  save_checkpoint(result.model, out.checkpoint);
  write_metrics_csv(out.metrics, result.metrics);
  out.metrics_rows = std::move(result.metrics);
  return out;
}

GenerateOutput cmd_generate(const RunConfig& config, const GenerateOptions& options) {
  const std::string family = canonical_family(options.family);
  const Dataset ds = require_dataset(config);
  const TransformerLm lm(load_model(config, ModelKind::lm));
  const auto guide = load_guide(config, family);
  const std::size_t classes = ds.metadata.num_classes;
  if (options.target_class && *options.target_class >= classes) {
    throw ConfigurationError("--class " + std::to_string(*options.target_class) + " but the dataset has " +
                             std::to_string(classes) + " classes");
  }
  SearchParams params = config.search;
  params.value_source = guide ? ValueSource::discriminator : ValueSource::lm_likelihood;
  check_compatible(lm, guide.get(), params);
  if (lm.alphabet() != ds.vocab.alphabet_utf8()) {
    throw ConfigurationError("language model vocabulary does not match dataset " + config.data_dir.string());
  }

  std::vector<BatchItem> items(options.n);
  std::vector<std::uint64_t> seeds(options.n);
  for (std::size_t i = 0; i < options.n; ++i) {
    seeds[i] = mix_seed(config.seed, 1000 + i);
    Rng rng(seeds[i]);
    items[i].prompt = sample_prompt(ds.test, config.generation.prompt_max_length, rng);
    items[i].target_class = options.target_class ? *options.target_class : i % classes;
  }
  GenerateOutput out;
  out.generations = generate_batch(items, lm, guide.get(), params, config.generation.threads);

  out.path = options.out.empty() ? config.output_dir / "samples" / (family + ".jsonl") : options.out;
  ensure_dir(out.path.parent_path());
  std::ostringstream text;
  ordered_json header;
  header["family"] = family;
  header["n"] = options.n;
  header["seed"] = config.seed;
  header["target_class"] = options.target_class ? ordered_json(*options.target_class) : ordered_json(nullptr);
  header["c_puct"] = params.c_puct;
  header["tau"] = params.tau;
  header["iterations"] = params.iterations_per_token;
  header["max_length"] = params.max_length;
  header["prompt_max_length"] = config.generation.prompt_max_length;
  header["alphabet"] = ds.vocab.alphabet_utf8();
  header["class_names"] = ds.metadata.class_names;
  text << ordered_json{{"header", header}}.dump() << '\n';
  for (std::size_t i = 0; i < options.n; ++i) {
    ordered_json rec;
    rec["text"] = decode(ds.vocab, out.generations[i].tokens);
    rec["target_class"] = items[i].target_class;
    rec["family"] = family;
    rec["seed"] = seeds[i];
    text << rec.dump() << '\n';
  }
  write_text(out.path, text.str());
  return out;
}

SampleFile read_sample_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigurationError("sample file " + path.string() + " not found");
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(path.string() + " is empty");
  SampleFile file;
  Vocabulary vocab;
  try {
    const auto header = nlohmann::json::parse(line).at("header");
    file.family = header.at("family").get<std::string>();
    file.samples.alphabet = header.at("alphabet").get<std::string>();
    vocab = Vocabulary::from_alphabet(utf8_to_u32(file.samples.alphabet));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": bad header line: " + e.what(), 1);
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      Sample s;
      s.tokens = encode(vocab, rec.at("text").get<std::string>());
      s.target_class = rec.at("target_class").get<std::size_t>();
      file.samples.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  return file;
}

EvaluateOutput cmd_evaluate(const RunConfig& config, const std::vector<std::filesystem::path>& sample_files,
                            const std::filesystem::path& out_dir) {
  if (sample_files.empty()) throw ValidationError("no sample files to evaluate");
  const auto oracle = make_discriminator(load_model(config, ModelKind::oracle_disc));
  const TransformerLm oracle_lm(load_model(config, ModelKind::oracle_lm));
  EvaluateOutput out;
  std::vector<std::vector<double>> scores;
  std::optional<std::size_t> baseline;
  for (const auto& path : sample_files) {
    const SampleFile file = read_sample_file(path);
    EvalReport report;
    report.label = file.family;
    report.sample_count = file.samples.samples.size();
    report.settings.emplace_back("file", path.filename().string());
    std::vector<double> target_probability;
    if (!file.samples.samples.empty()) {
      const OracleJudgement j = oracle_judge(file.samples, *oracle);
      report.accuracy = j.accuracy;
      report.per_class_accuracy = j.per_class;
      if (file.samples.samples.size() >= 2) report.self_bleu_5 = self_bleu(file.samples, 5);
      report.oracle_perplexity = oracle_perplexity(file.samples, oracle_lm);
      target_probability = j.target_probability;
    }
    if (file.family == "none" && !baseline) baseline = out.reports.size();
    out.reports.push_back(std::move(report));
    scores.push_back(std::move(target_probability));
  }
  if (baseline) {
    for (std::size_t i = 0; i < out.reports.size(); ++i) {
      if (i == *baseline) continue;
      Comparison c;
      c.label = out.reports[i].label;
      c.baseline = out.reports[*baseline].label;
      c.welch = welch_t_test(scores[i], scores[*baseline]);
      out.comparisons.push_back(c);
    }
  }
  ensure_dir(out_dir);
  PlotData plots;
  plots.quality = out.reports;
  out.files = write_plot_data(out_dir, plots);
  ordered_json summary;
  summary["reports"] = ordered_json::array();
  for (const auto& r : out.reports) summary["reports"].push_back(ordered_json::parse(r.to_json()));
  summary["welch_vs_baseline"] = ordered_json::array();
  for (const auto& c : out.comparisons) {
    summary["welch_vs_baseline"].push_back({{"label", c.label},
                                            {"baseline", c.baseline},
                                            {"t", c.welch.t},
                                            {"degrees_of_freedom", c.welch.degrees_of_freedom},
                                            {"p_value", c.welch.p_value}});
  }
  const auto summary_path = out_dir / "evaluate_summary.json";
  write_text(summary_path, summary.dump(2) + "\n");
  out.files.push_back(summary_path);
  return out;
}

BenchOutput cmd_bench(const RunConfig& config, const std::filesystem::path& out_dir) {
  const Dataset ds = require_dataset(config);
  const TransformerLm lm(load_model(config, ModelKind::lm));
  std::vector<std::string> tags;
  std::vector<std::unique_ptr<Discriminator>> guides;
  for (const auto& f : config.bench.families) {
    tags.push_back(canonical_family(f));
    if (tags.back() == "none") throw ValidationError("bench families must be discriminator families");
    guides.push_back(load_guide(config, f));
  }
  BenchOutput out;

  std::vector<std::size_t> lengths = config.bench.probe_lengths;
  if (lengths.empty()) {
    std::size_t longest = 1;
    for (const auto& ex : ds.test.examples) longest = std::max(longest, ex.tokens.size() - 1);
    for (std::size_t l = 1; l <= longest; ++l) lengths.push_back(l);
  }
  for (std::size_t i = 0; i < guides.size(); ++i) {
    out.plots.accuracy_curves.push_back({tags[i], accuracy_vs_length(*guides[i], ds.test, lengths)});
  }

  SearchParams params = config.search;
  params.allow_eos = config.bench.allow_eos;
  params.max_steps = config.bench.max_steps;
  params.max_length = std::min(params.max_length, lm.max_positions() - 1);
  const auto prompts = prompt_pool(ds.test, config.generation.prompt_max_length);
  ordered_json families = ordered_json::array();
  for (std::size_t i = 0; i < guides.size(); ++i) {
    const ProfileRun run = profile_generation(lm, guides[i].get(), params, prompts, config.bench.num_batches,
                                              config.bench.batch_size, config.seed, config.bench.threads);
    out.plots.step_costs.insert(out.plots.step_costs.end(), run.records.begin(), run.records.end());
    const auto n = static_cast<double>(run.generations.size());
    families.push_back({{"family", tags[i]},
                        {"sequences", run.generations.size()},
                        {"forward_passes_per_sequence", static_cast<double>(run.discriminator_total.forward_passes) / n},
                        {"attention_scores_per_sequence",
                         static_cast<double>(run.discriminator_total.attention_scores) / n},
                        {"accuracy_at_length_1", out.plots.accuracy_curves[i].points.front().accuracy},
                        {"accuracy_at_longest", out.plots.accuracy_curves[i].points.back().accuracy}});
  }

  std::vector<const Discriminator*> raw;
  for (const auto& g : guides) raw.push_back(g.get());
  out.accounting = forward_pass_accounting(lm, raw, config.search, config.bench.c_puct_sweep, prompts,
                                           config.bench.accounting_sequences, config.seed, config.bench.threads);

  ensure_dir(out_dir);
  out.files = write_plot_data(out_dir, out.plots);
  const auto accounting_path = out_dir / "accounting.csv";
  write_accounting_csv(out.accounting, accounting_path);
  out.files.push_back(accounting_path);
  ordered_json summary;
  summary["iterations"] = params.iterations_per_token;
  summary["c_puct"] = params.c_puct;
  summary["families"] = families;
  summary["accounting"] = ordered_json::array();
  for (const auto& r : out.accounting) {
    summary["accounting"].push_back({{"c_puct", r.c_puct},
                                     {"family", r.family},
                                     {"forward_passes", r.forward_passes},
                                     {"width", r.width}});
  }
  summary["wall_time_note"] = "wall_seconds columns are machine-dependent and indicative only";
  const auto summary_path = out_dir / "bench_summary.json";
  write_text(summary_path, summary.dump(2) + "\n");
  out.files.push_back(summary_path);
  return out;
}

// ---------------------------------------------------------------------------
// Argument parsing

namespace {

struct Cli {
  std::string config_path;
  std::string output_dir;
  std::string data_dir;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve_config(const Cli& cli) {
  RunConfig cfg = cli.config_path.empty() ? RunConfig{} : load_run_config(cli.config_path);
  if (cli.seed) cfg.seed = *cli.seed;
  if (!cli.data_dir.empty()) cfg.data_dir = cli.data_dir;
  if (!cli.output_dir.empty()) {
    cfg.output_dir = cli.output_dir;
  } else if (cfg.output_dir.empty()) {
    const char* env = std::getenv(kOutputDirEnv);
    cfg.output_dir = env != nullptr && *env != '\0' ? env : "coopgen-out";
  }
  return cfg;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"coopgen: discriminator-guided MCTS text generation", "coopgen"};
  app.require_subcommand(1);
  app.fallthrough();
  Cli cli;
  std::uint64_t seed_flag = 0;
  app.add_option("--config", cli.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--output-dir", cli.output_dir,
                 std::string("output directory (default: config, then $") + kOutputDirEnv + ", then ./coopgen-out)");
  app.add_option("--data-dir", cli.data_dir, "dataset directory");
  auto* seed_opt = app.add_option("--seed", seed_flag, "run seed");

  auto* make_data = app.add_subcommand("make-data", "write a bundled synthetic corpus");
  std::string spec;
  std::string data_out;
  SplitSizes sizes;
  make_data->add_option("spec", spec, "corpus generator")->required()->check(CLI::IsMember({"polarity2", "topic4"}));
  make_data->add_option("--out", data_out, "destination (default: <output-dir>/data/<spec>)");
  make_data->add_option("--train", sizes.train);
  make_data->add_option("--validation", sizes.validation);
  make_data->add_option("--test", sizes.test);
  make_data->add_option("--oracle-train", sizes.oracle_train);

  auto* train = app.add_subcommand("train", "train one model and write its checkpoint and metrics");
  std::string kind_name;
  std::optional<std::size_t> epochs, batch_size, accumulation;
  std::optional<double> learning_rate;
  std::vector<std::string> kind_names;
  for (ModelKind k : kAllModelKinds) kind_names.emplace_back(model_kind_name(k));
  train->add_option("kind", kind_name, "model kind")->required()->check(CLI::IsMember(kind_names));
  train->add_option("--epochs", epochs);
  train->add_option("--batch-size", batch_size);
  train->add_option("--grad-accum", accumulation);
  train->add_option("--lr", learning_rate);

  auto* generate = app.add_subcommand("generate", "generate guided samples");
  GenerateOptions gen;
  std::optional<std::size_t> target, iterations, max_length, threads;
  std::optional<double> c_puct, tau;
  std::string out_path;
  generate->add_option("--class", target, "target class (default: rotate over classes)");
  generate->add_option("--family", gen.family, "guide")->check(CLI::IsMember({"bi", "uni", "gedi", "none"}));
  std::optional<std::size_t> count;
  generate->add_option("--n", count, "number of samples (default: samples_per_class per targeted class)");
  generate->add_option("--iterations", iterations);
  generate->add_option("--c-puct", c_puct);
  generate->add_option("--tau", tau);
  generate->add_option("--max-length", max_length);
  generate->add_option("--threads", threads);
  generate->add_option("--out", out_path, "samples file (default: <output-dir>/samples/<family>.jsonl)");

  auto* evaluate = app.add_subcommand("evaluate", "judge sample files with the oracle models");
  std::vector<std::string> sample_files;
  std::string eval_out;
  evaluate->add_option("samples", sample_files, "sample files")->required()->check(CLI::ExistingFile);
  evaluate->add_option("--out-dir", eval_out, "report directory (default: <output-dir>/reports)");

  auto* bench = app.add_subcommand("bench", "cost curves, accuracy curves and the c_puct sweep");
  std::vector<std::string> families;
  std::optional<std::size_t> num_batches, bench_batch, max_steps;
  std::string bench_out;
  bench->add_option("--families", families)->check(CLI::IsMember({"bi", "uni", "gedi"}));
  bench->add_option("--num-batches", num_batches);
  bench->add_option("--batch-size", bench_batch);
  bench->add_option("--max-steps", max_steps);
  bench->add_option("--iterations", iterations);
  bench->add_option("--out-dir", bench_out, "report directory (default: <output-dir>/bench)");

  auto* show = app.add_subcommand("show-config", "print the effective configuration");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();  // program name
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (*seed_opt) cli.seed = seed_flag;

  try {
    RunConfig cfg = resolve_config(cli);
    if (iterations) cfg.search.iterations_per_token = *iterations;
    if (*make_data) {
      const std::filesystem::path dir = data_out.empty() ? cfg.output_dir / "data" / spec : std::filesystem::path(data_out);
      std::cout << cmd_make_data(spec, cfg.seed, dir, sizes).string() << '\n';
    } else if (*train) {
      const ModelKind kind = parse_model_kind(kind_name);
      TrainConfig t = cfg.train_config(kind);
      if (epochs) t.epochs = *epochs;
      if (batch_size) t.batch_size = *batch_size;
      if (accumulation) t.gradient_accumulation = *accumulation;
      if (learning_rate) t.learning_rate = *learning_rate;
      std::erase_if(cfg.train_overrides, [&](const auto& o) { return o.first == kind; });
      cfg.train_overrides.emplace_back(kind, t);
      const TrainOutput o = cmd_train(cfg, kind, [](const EpochMetrics& m) {
        std::cerr << "epoch " << m.epoch << ' ' << m.split << " loss " << m.loss;
        if (m.accuracy) std::cerr << " accuracy " << *m.accuracy;
        if (m.perplexity) std::cerr << " perplexity " << *m.perplexity;
        std::cerr << '\n';
      });
      std::cout << o.checkpoint.string() << '\n' << o.metrics.string() << '\n';
    } else if (*generate) {
      gen.target_class = target;
      gen.out = out_path;
      if (count) {
        gen.n = *count;
      } else {
        const std::size_t classes = target ? 1 : require_dataset(cfg).metadata.num_classes;
        gen.n = cfg.generation.samples_per_class * classes;
      }
      if (c_puct) cfg.search.c_puct = *c_puct;
      if (tau) cfg.search.tau = *tau;
      if (max_length) cfg.search.max_length = *max_length;
      if (threads) cfg.generation.threads = *threads;
      std::cout << cmd_generate(cfg, gen).path.string() << '\n';
    } else if (*evaluate) {
      std::vector<std::filesystem::path> files(sample_files.begin(), sample_files.end());
      const EvaluateOutput o = cmd_evaluate(cfg, files, eval_out.empty() ? cfg.output_dir / "reports" : std::filesystem::path(eval_out));
      for (const auto& r : o.reports) std::cout << r.label << " accuracy " << r.accuracy << '\n';
      for (const auto& c : o.comparisons) {
        std::cout << c.label << " vs " << c.baseline << " welch t " << c.welch.t << " p " << c.welch.p_value << '\n';
      }
    } else if (*bench) {
      if (!families.empty()) cfg.bench.families = families;
      if (num_batches) cfg.bench.num_batches = *num_batches;
      if (bench_batch) cfg.bench.batch_size = *bench_batch;
      if (max_steps) cfg.bench.max_steps = *max_steps;
      for (const auto& f : cmd_bench(cfg, bench_out.empty() ? cfg.output_dir / "bench" : std::filesystem::path(bench_out)).files) {
        std::cout << f.string() << '\n';
      }
    } else if (*show) {
      std::cout << cfg.to_json() << '\n';
    }
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace coopgen
