// Command-line driver: staged training, evaluation, experiments, corpus
// generation.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mein/checkpoint.hpp"
#include "mein/config.hpp"
#include "mein/data.hpp"
#include "mein/pipeline.hpp"
#include "mein/report.hpp"

namespace fs = std::filesystem;
using namespace mein;

namespace {

struct CommonOptions {
  std::string config_path;
  std::string out = "mein_out";
  std::string data;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> seeds;
  std::optional<std::size_t> jobs;
  std::vector<std::string> overrides;
  bool random_imn = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool multi_seed) {
  cmd->add_option("--config", o.config_path, "Config file (key = value with [section] headers)");
  cmd->add_option("--out", o.out, "Output directory")->capture_default_str();
  cmd->add_option("--data", o.data, "Corpus directory (train.tsv, dev.tsv, test.tsv, unlabeled.txt)");
  cmd->add_option("--seed", o.seed, "Run seed");
  if (multi_seed) cmd->add_option("--seeds", o.seeds, "Number of seeds, counting up from --seed");
  cmd->add_option("--jobs", o.jobs, "Parallel seed workers (default: MEIN_THREADS or run.jobs)");
  cmd->add_option("--set", o.overrides, "Override a config key, e.g. --set train.batch_size=16");
  cmd->add_flag("--quiet", o.quiet, "Suppress progress output");
}

TrainConfig resolve(const CommonOptions& o, std::optional<std::string> base_text = std::nullopt) {
  TrainConfig config;
  if (!o.config_path.empty()) {
    config = load_config(o.config_path);
  } else if (base_text) {
    config = parse_config(*base_text);
  }
  apply_overrides(config, o.overrides);
  if (!o.data.empty()) config.data_path = o.data;
  if (o.seed) config.seed = *o.seed;
  if (o.seeds) config.seeds = *o.seeds;
  if (o.jobs) {
    config.jobs = *o.jobs;
  } else if (const char* env = std::getenv("MEIN_THREADS"); env != nullptr && *env != '\0') {
    apply_setting(config, "run.jobs", env);
  }
  if (o.random_imn) config.random_imn = true;
  config.validate();
  return config;
}

fs::path words_path(const fs::path& dir) { return dir / "words.vocab"; }
fs::path bpe_stem(const fs::path& dir) { return dir / "bpe"; }

PreparedData load_prepared(const TrainConfig& config, const fs::path& dir) {
  if (!fs::exists(words_path(dir))) {
    throw std::runtime_error("vocabulary not found in " + dir.string() + " (run `train expert` first)");
  }
  return prepare_data(load_or_generate(config), config, WordVocabulary::load(words_path(dir)),
                      BpeVocabulary::load(bpe_stem(dir)));
}

Checkpoint require_checkpoint(const fs::path& path, StageTag tag, const std::string& needed_by) {
  if (!fs::exists(path)) {
    throw std::runtime_error("stage '" + needed_by + "' requires the '" + std::string(stage_name(tag)) +
                             "' stage checkpoint, but " + path.string() + " does not exist (run `train " +
                             std::string(stage_name(tag)) + "` first)");
  }
  return load_checkpoint(path, tag);
}

ExpertParams restore_expert(const Checkpoint& ck, const TrainConfig& config, const PreparedData& data) {
  auto expert = ExpertParams::init(expert_config(config, data), 0);
  restore(ck, expert.named());
  set_trainable(expert.named(), false);
  return expert;
}

std::vector<ImitatorParams> restore_imitators(const Checkpoint& ck, const TrainConfig& config,
                                              const PreparedData& data) {
  std::vector<ImitatorParams> out;
  for (auto c : config.windows()) {
    auto im = ImitatorParams::init(imitator_config(config, data, c), 0);
    restore(ck, im.named());
    set_trainable(im.named(), false);
    out.push_back(std::move(im));
  }
  return out;
}

ParamList concat(std::initializer_list<ParamList> lists) {
  ParamList all;
  for (const auto& l : lists) all.insert(all.end(), l.begin(), l.end());
  return all;
}

ParamList all_params(const std::vector<ImitatorParams>& imitators) {
  ParamList all;
  for (const auto& im : imitators) {
    const auto n = im.named();
    all.insert(all.end(), n.begin(), n.end());
  }
  return all;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string fmt_error(const std::optional<double>& v) { return v ? pct(*v) + "%" : std::string("n/a"); }

void write_snapshot(const fs::path& out, const TrainConfig& config) {
  write_text(out / "config.txt", config.to_text());
}

// ---------------------------------------------------------------------------

int cmd_synth(const CommonOptions& o) {
  const auto config = resolve(o);
  auto spec = config.synth;
  if (o.seed) spec.seed = *o.seed;
  const auto synthetic = generate_synthetic(spec);
  save_corpus(synthetic.corpus, o.out);
  write_snapshot(o.out, config);
  std::cout << "wrote synthetic corpus to " << o.out << ": " << synthetic.corpus.train.size() << " train, "
            << synthetic.corpus.dev.size() << " dev, " << synthetic.corpus.test.size() << " test, "
            << synthetic.corpus.unlabeled.size() << " unlabeled\n";
  return 0;
}

int cmd_train_expert(const CommonOptions& o) {
  const auto config = resolve(o);
  const fs::path out = o.out;
  fs::create_directories(out);
  const auto data = prepare_data(load_or_generate(config), config);
  data.words.save(words_path(out));
  data.bpe.save(bpe_stem(out));
  write_snapshot(out, config);
  const auto text = config.to_text();
  EpochHook hook;
  if (config.epoch_checkpoints) {
    hook = [&](std::size_t epoch, const ParamList& params) {
      save_checkpoint(out / ("expert-epoch-" + std::to_string(epoch) + ".ckpt"), StageTag::kExpert, params, text);
    };
  }
  const auto stage = train_expert(data, config, config.seed, hook);
  save_checkpoint(out / "expert.ckpt", StageTag::kExpert, stage.params.named(), text);
  write_csv(out / "train.csv", record_header(),
            stage_rows("train", std::to_string(config.seed), stage.record, config.record_timing), true);
  std::cout << "expert: selected epoch " << stage.record.selected.value_or(0) << ", test error "
            << fmt_error(stage.record.test_error) << "\n";
  return 0;
}

int cmd_train_imitators(const CommonOptions& o) {
  const fs::path out = o.out;
  const auto ck = require_checkpoint(out / "expert.ckpt", StageTag::kExpert, "imitators");
  const auto config = resolve(o, ck.config_text);
  const auto data = load_prepared(config, out);
  const auto expert = restore_expert(ck, config, data);
  const auto text = config.to_text();
  EpochHook hook;
  if (config.epoch_checkpoints) {
    hook = [&](std::size_t epoch, const ParamList& params) {
      save_checkpoint(out / ("imitators-epoch-" + std::to_string(epoch) + ".ckpt"), StageTag::kImitators, params,
                      text);
    };
  }
  const auto windows = config.windows();
  const auto stage = train_imitators(data.unlabeled, expert, imitator_config(config, data, 1), config, config.seed,
                                     windows, ImitatorSchedule::kJoint, hook);
  save_checkpoint(out / "imitators.ckpt", StageTag::kImitators, all_params(stage.imitators), text);
  write_snapshot(out, config);
  write_csv(out / "train.csv", record_header(),
            stage_rows("train", std::to_string(config.seed), stage.record, config.record_timing), true);
  std::cout << "imitators: " << windows.size() << " trained on " << data.unlabeled.size() << " unlabeled texts";
  if (!stage.record.epochs.empty() && stage.record.epochs.back().window_kl) {
    std::cout << ", final mean window KL " << *stage.record.epochs.back().window_kl;
  }
  std::cout << "\n";
  return 0;
}

int cmd_train_finetune(const CommonOptions& o) {
  const fs::path out = o.out;
  const auto expert_ck = require_checkpoint(out / "expert.ckpt", StageTag::kExpert, "finetune");
  auto config = resolve(o, expert_ck.config_text);
  std::optional<Checkpoint> imitator_ck;
  if (!config.random_imn) imitator_ck = require_checkpoint(out / "imitators.ckpt", StageTag::kImitators, "finetune");
  if (imitator_ck && o.config_path.empty()) {
    // Imitator settings come from the run that trained them.
    auto trained = parse_config(imitator_ck->config_text);
    config.num_imitators = trained.num_imitators;
    config.imitator_embed_dim = trained.imitator_embed_dim;
    config.kernel_dim = trained.kernel_dim;
  }
  const auto data = load_prepared(config, out);
  const auto expert = restore_expert(expert_ck, config, data);
  const auto text = config.to_text();
  const std::string name = config.random_imn ? "mixture-random" : "mixture";
  EpochHook hook;
  if (config.epoch_checkpoints) {
    hook = [&](std::size_t epoch, const ParamList& params) {
      save_checkpoint(out / (name + "-epoch-" + std::to_string(epoch) + ".ckpt"), StageTag::kMixture, params, text);
    };
  }
  MixtureStage stage;
  std::vector<ImitatorParams> imitators;
  if (config.random_imn) {
    stage = fine_tune(data, expert, random_feature_set(data, config.num_imitators, config.seed), config,
                      config.seed, "finetune-random", hook);
  } else {
    imitators = restore_imitators(*imitator_ck, config, data);
    stage = fine_tune(data, expert, imitators, config, config.seed, hook);
  }
  save_checkpoint(out / (name + ".ckpt"), StageTag::kMixture,
                  concat({stage.expert.named(), stage.gates.named(), all_params(imitators)}), text);
  write_snapshot(out, config);
  write_csv(out / "train.csv", record_header(),
            stage_rows("train", std::to_string(config.seed), stage.record, config.record_timing), true);
  std::cout << stage.record.stage << ": selected epoch " << stage.record.selected.value_or(0) << ", test error "
            << fmt_error(stage.record.test_error) << "\n";
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint_path, const std::string& split) {
  const fs::path path = checkpoint_path;
  const auto ck = load_checkpoint(path);
  if (ck.stage == StageTag::kImitators) {
    throw std::runtime_error("an imitators checkpoint has no classifier; evaluate an expert or mixture checkpoint");
  }
  CommonOptions eval_opts = o;
  eval_opts.config_path.clear();
  auto config = resolve(eval_opts, ck.config_text);
  const auto dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  const auto data = load_prepared(config, dir);
  const std::vector<EncodedExample>* examples = nullptr;
  if (split == "train") examples = &data.train;
  if (split == "dev") examples = &data.dev;
  if (split == "test") examples = &data.test;
  if (examples == nullptr) throw std::runtime_error("unknown split '" + split + "' (expected train, dev or test)");
  if (examples->empty()) throw std::runtime_error("split '" + split + "' is absent from the corpus");

  const auto expert = restore_expert(ck, config, data);
  double error = 0.0;
  if (ck.stage == StageTag::kExpert) {
    error = evaluate_expert(expert, *examples);
  } else {
    MixtureGates gates = MixtureGates::disabled(config.num_imitators);
    restore(ck, gates.named());
    FeatureTable features;
    if (config.random_imn) {
      features = random_features(data.num_classes, config.num_imitators, config.seed, *examples);
    } else {
      features = imitator_features(restore_imitators(ck, config, data), *examples);
    }
    error = evaluate(expert, gates, features, *examples);
  }
  std::cout << split << " error rate: " << pct(error) << "%\n";
  const fs::path out = o.out == "mein_out" ? dir : fs::path(o.out);
  write_csv(out / "eval.csv", {"checkpoint", "stage", "split", "error_rate"},
            {{path.string(), std::string(stage_name(ck.stage)), split, format_fixed(error, 2)}}, true);
  return 0;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> parse_list(const std::string& text, char sep) {
  std::vector<std::size_t> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) {
    if (item.empty()) continue;
    std::size_t v = 0;
    std::size_t used = 0;
    try {
      v = std::stoul(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw std::runtime_error("bad number '" + item + "' in list '" + text + "'");
    out.push_back(v);
  }
  return out;
}

int cmd_protocol(const CommonOptions& o) {
  const auto config = resolve(o);
  const fs::path out = o.out;
  const auto data = prepare_data(load_or_generate(config), config);
  write_snapshot(out, config);
  const auto result = run_protocol(data, config, true);
  write_csv(out / "protocol.csv", record_header(), protocol_rows(result, config.record_timing));
  std::cout << "seeds: " << result.runs.size() << "\n"
            << "expert            " << pct(result.expert.mean) << " +- " << pct(result.expert.stddev) << "\n"
            << "expert+IMN        " << pct(result.mixture.mean) << " +- " << pct(result.mixture.stddev) << "\n";
  if (result.random) {
    std::cout << "expert+IMN random " << pct(result.random->mean) << " +- " << pct(result.random->stddev) << "\n";
  }
  return 0;
}

int cmd_sweep(const CommonOptions& o, const std::string& sizes_text) {
  const auto config = resolve(o);
  const fs::path out = o.out;
  const auto data = prepare_data(load_or_generate(config), config);
  write_snapshot(out, config);
  const auto sizes = parse_list(sizes_text, ',');
  const auto result = sweep_unlabeled(data, config, sizes);
  std::vector<CsvRow> rows;
  PlotSeries series{"expert+IMN", {}};
  for (const auto& p : result.points) {
    rows.push_back({std::to_string(p.size), format_fixed(p.summary.mean, 4), format_fixed(p.summary.stddev, 4),
                    std::to_string(p.errors.size())});
    series.points.push_back({static_cast<double>(p.size), p.summary.mean, p.summary.stddev});
    std::cout << "size " << p.size << ": " << pct(p.summary.mean) << " +- " << pct(p.summary.stddev) << "\n";
  }
  write_csv(out / "sweep.csv", {"size", "mean_error", "std_error", "seeds"}, rows);
  write_csv(out / "sweep_records.csv", record_header(), result.records);
  write_text(out / "sweep.svg", line_plot_svg({series}, "Error rate vs. unlabeled data",
                                              "unlabeled examples (log scale)", "error rate (%)"));
  return 0;
}

int cmd_ablate(const CommonOptions& o, const std::string& subsets_text) {
  const auto config = resolve(o);
  const fs::path out = o.out;
  std::vector<std::vector<std::size_t>> subsets;
  std::stringstream in(subsets_text);
  std::string item;
  while (std::getline(in, item, ';'))
    if (!item.empty()) subsets.push_back(parse_list(item, ','));
  const auto data = prepare_data(load_or_generate(config), config);
  write_snapshot(out, config);
  const auto result = ablate_windows(data, config, subsets);
  std::vector<CsvRow> rows;
  for (const auto& p : result.points) {
    std::string windows;
    for (std::size_t i = 0; i < p.windows.size(); ++i) windows += (i ? "," : "") + std::to_string(p.windows[i]);
    rows.push_back({p.label, windows, format_fixed(p.summary.mean, 4), format_fixed(p.summary.stddev, 4),
                    std::to_string(p.errors.size())});
    std::cout << p.label << " (c=" << windows << "): " << pct(p.summary.mean) << " +- " << pct(p.summary.stddev)
              << "\n";
  }
  write_csv(out / "ablate.csv", {"subset", "windows", "mean_error", "std_error", "seeds"}, rows);
  write_csv(out / "ablate_records.csv", record_header(), result.records);
  return 0;
}

int cmd_bench(const CommonOptions& o, double seconds) {
  const auto config = resolve(o);
  const fs::path out = o.out;
  const auto data = prepare_data(load_or_generate(config), config);
  write_snapshot(out, config);
  const auto rows = bench_throughput(data, config, seconds);
  std::vector<CsvRow> csv;
  for (const auto& r : rows) {
    std::string windows;
    for (std::size_t i = 0; i < r.windows.size(); ++i) windows += (i ? "," : "") + std::to_string(r.windows[i]);
    csv.push_back({r.network, windows, format_fixed(r.tokens_per_sec, 1), format_fixed(r.relative_speed, 2)});
    std::cout << r.network << (windows.empty() ? "" : " c=" + windows) << ": " << format_fixed(r.tokens_per_sec, 0)
              << " tokens/s (" << format_fixed(r.relative_speed, 2) << "x)\n";
  }
  write_csv(out / "bench.csv", {"network", "windows", "tokens_per_sec", "relative_speed"}, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Expert/imitator semi-supervised text classification"};
  app.require_subcommand(1);

  CommonOptions synth_opts, train_opts, eval_opts, exp_opts;
  auto* synth = app.add_subcommand("synth", "Write a synthetic corpus");
  add_common(synth, synth_opts, false);

  auto* train = app.add_subcommand("train", "Run one training stage");
  train->require_subcommand(1);
  auto* t_expert = train->add_subcommand("expert", "Stage 1: supervised expert");
  auto* t_imit = train->add_subcommand("imitators", "Stage 2: imitators on unlabeled text");
  auto* t_fine = train->add_subcommand("finetune", "Stage 3: expert and gates with frozen imitators");
  for (auto* c : {t_expert, t_imit, t_fine}) add_common(c, train_opts, false);
  t_fine->add_flag("--random-imn", train_opts.random_imn, "Replace imitator outputs with fixed random vectors");

  auto* eval = app.add_subcommand("eval", "Error rate of a checkpoint on one split");
  std::string checkpoint, split = "test";
  eval->add_option("--checkpoint", checkpoint, "Expert or mixture checkpoint")->required();
  eval->add_option("--split", split, "train, dev or test")->capture_default_str();
  add_common(eval, eval_opts, false);

  auto* experiment = app.add_subcommand("experiment", "Multi-seed experiments");
  experiment->require_subcommand(1);
  auto* e_protocol = experiment->add_subcommand("protocol", "All stages per seed, with the random control");
  auto* e_sweep = experiment->add_subcommand("sweep", "Error against the amount of unlabeled data");
  auto* e_ablate = experiment->add_subcommand("ablate", "Error per imitator window subset");
  auto* e_bench = experiment->add_subcommand("bench", "Training throughput per network");
  for (auto* c : {e_protocol, e_sweep, e_ablate, e_bench}) add_common(c, exp_opts, true);
  std::string sizes = "500,2000,10000";
  std::string subsets = "1;1,2;1,2,3;1,2,3,4";
  double seconds = 2.0;
  e_sweep->add_option("--sizes", sizes, "Comma-separated unlabeled sizes, ascending")->capture_default_str();
  e_ablate->add_option("--subsets", subsets, "Window subsets separated by ';'")->capture_default_str();
  e_bench->add_option("--seconds", seconds, "Timed seconds per row")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  auto quiet = [](const CommonOptions& o) { set_progress_sink(o.quiet ? nullptr : &std::cerr); };
  try {
    if (*synth) return cmd_synth(synth_opts);
    if (*t_expert) return quiet(train_opts), cmd_train_expert(train_opts);
    if (*t_imit) return quiet(train_opts), cmd_train_imitators(train_opts);
    if (*t_fine) return quiet(train_opts), cmd_train_finetune(train_opts);
    if (*eval) return cmd_eval(eval_opts, checkpoint, split);
    quiet(exp_opts);
    if (*e_protocol) return cmd_protocol(exp_opts);
    if (*e_sweep) return cmd_sweep(exp_opts, sizes);
    if (*e_ablate) return cmd_ablate(exp_opts, subsets);
    if (*e_bench) return cmd_bench(exp_opts, seconds);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
