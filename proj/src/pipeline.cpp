#include "mein/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "mein/adam.hpp"
#include "mein/ops.hpp"
#include "mein/params.hpp"

namespace mein {

namespace {

constexpr std::size_t kEvalBatch = 256;

std::mutex g_progress_mutex;
std::ostream* g_progress = nullptr;

template <typename... Args>
void progress(const Args&... args) {
  std::lock_guard lock(g_progress_mutex);
  if (g_progress == nullptr) return;
  ((*g_progress) << ... << args) << '\n';
  g_progress->flush();
}

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

std::size_t expert_tokens(const Batch& b) {
  std::size_t n = 0;
  for (const auto& s : b.expert) n += s.size();
  return n;
}

std::size_t imitator_tokens(const Batch& b) {
  std::size_t n = 0;
  for (const auto& s : b.imitator) n += s.size();
  return n;
}

AdamConfig adam_config(const TrainConfig& config, double learning_rate) {
  AdamConfig a;
  a.learning_rate = learning_rate;
  a.decay = config.decay;
  a.clip_norm = config.clip_norm;
  return a;
}

void check_finite(double loss, const std::string& stage, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    throw TrainingError(stage + ": loss became " + std::to_string(loss) + " at epoch " +
                        std::to_string(epoch) + ", batch " + std::to_string(batch) +
                        "; lower the learning rate or enable train.clip_norm");
  }
}

Tensor gather_rows(const std::vector<float>& table, std::size_t cols, std::span<const std::size_t> rows) {
  std::vector<float> out;
  out.reserve(rows.size() * cols);
  for (auto r : rows) {
    const auto* p = table.data() + r * cols;
    out.insert(out.end(), p, p + cols);
  }
  return Tensor::constant({rows.size(), cols}, std::move(out));
}

std::vector<Tensor> gather_alphas(const FeatureTable& features, std::size_t cols,
                                  std::span<const std::size_t> rows) {
  std::vector<Tensor> alphas;
  alphas.reserve(features.size());
  for (const auto& table : features) alphas.push_back(gather_rows(table, cols, rows));
  return alphas;
}

std::vector<std::int32_t> labels_of(std::span<const EncodedExample> examples) {
  std::vector<std::int32_t> labels;
  labels.reserve(examples.size());
  for (const auto& ex : examples) labels.push_back(ex.label);
  return labels;
}

std::vector<std::size_t> selected_windows(const std::vector<ImitatorParams>& imitators) {
  std::vector<std::size_t> out;
  for (const auto& im : imitators) out.push_back(im.config.window);
  return out;
}

ParamList imitator_params(std::span<const ImitatorParams> imitators) {
  ParamList all;
  for (const auto& im : imitators) {
    auto named = im.named();
    all.insert(all.end(), named.begin(), named.end());
  }
  return all;
}

std::string join_windows(std::span<const std::size_t> windows) {
  std::string s;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(windows[i]);
  }
  return s;
}

}  // namespace

void set_progress_sink(std::ostream* sink) {
  std::lock_guard lock(g_progress_mutex);
  g_progress = sink;
}

double StageRecord::tokens_per_sec() const {
  std::size_t tokens = 0;
  double ms = 0.0;
  for (const auto& e : epochs) {
    tokens += e.tokens;
    ms += e.wall_ms;
  }
  return ms > 0.0 ? static_cast<double>(tokens) / (ms / 1000.0) : 0.0;
}

// ---------------------------------------------------------------------------
// Data

Corpus load_or_generate(const TrainConfig& config) {
  if (!config.data_path.empty()) return load_corpus(config.data_path);
  return generate_synthetic(config.synth).corpus;
}

PreparedData prepare_data(const Corpus& corpus, const TrainConfig& config) {
  const auto texts = corpus.vocabulary_texts();
  auto words = WordVocabulary::build(texts, config.min_count);
  auto bpe = BpeVocabulary::learn(texts, config.bpe_merges);
  return prepare_data(corpus, config, std::move(words), std::move(bpe));
}

PreparedData prepare_data(const Corpus& corpus, const TrainConfig& config, WordVocabulary words,
                          BpeVocabulary bpe) {
  PreparedData data;
  data.num_classes = corpus.num_classes;
  data.words = std::move(words);
  data.bpe = std::move(bpe);
  data.train = encode_labeled(corpus.train, data.words, data.bpe, config.max_len);
  data.dev = encode_labeled(corpus.dev, data.words, data.bpe, config.max_len);
  data.test = encode_labeled(corpus.test, data.words, data.bpe, config.max_len);
  data.unlabeled = encode_texts(corpus.unlabeled, data.words, data.bpe, config.max_len);
  return data;
}

ExpertConfig expert_config(const TrainConfig& config, const PreparedData& data) {
  ExpertConfig c;
  c.vocab_size = data.words.size();
  c.embed_dim = config.embed_dim;
  c.hidden_dim = config.hidden_dim;
  c.mlp_dim = config.mlp_dim;
  c.num_classes = data.num_classes;
  c.dropout = config.dropout;
  return c;
}

ImitatorConfig imitator_config(const TrainConfig& config, const PreparedData& data, std::size_t window) {
  ImitatorConfig c;
  c.vocab_size = data.bpe.size();
  c.embed_dim = config.imitator_embed_dim;
  c.kernel_dim = config.kernel_dim;
  c.num_classes = data.num_classes;
  c.window = window;
  return c;
}

// ---------------------------------------------------------------------------
// Evaluation

double error_rate(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels) {
  if (labels.empty()) throw std::invalid_argument("error_rate: empty dataset");
  if (predictions.size() != labels.size()) throw std::invalid_argument("error_rate: size mismatch");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += predictions[i] != labels[i] ? 1 : 0;
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(labels.size());
}

std::vector<float> expert_distributions(const ExpertParams& expert,
                                        std::span<const EncodedExample> examples) {
  NoGradGuard no_grad;
  std::vector<float> out;
  out.reserve(examples.size() * expert.config.num_classes);
  for (const auto& idx : batch_indices(examples.size(), kEvalBatch, nullptr)) {
    const auto batch = gather_batch(examples, idx);
    const auto probs = expert_targets(batch.expert, expert);
    out.insert(out.end(), probs.values().begin(), probs.values().end());
  }
  return out;
}

std::vector<float> mixture_distributions(const ExpertParams& expert, const MixtureGates& gates,
                                         const FeatureTable& features,
                                         std::span<const EncodedExample> examples) {
  NoGradGuard no_grad;
  const auto classes = expert.config.num_classes;
  const bool expert_only = gates.size() == 0 || features.empty();
  if (!expert_only && features.size() != gates.size()) {
    throw ShapeError("mixture_distributions: " + std::to_string(features.size()) +
                     " feature tables for " + std::to_string(gates.size()) + " gates");
  }
  std::vector<float> out;
  out.reserve(examples.size() * classes);
  for (const auto& idx : batch_indices(examples.size(), kEvalBatch, nullptr)) {
    const auto batch = gather_batch(examples, idx);
    const auto z = expert_forward(batch.expert, expert).logits;
    Tensor probs;
    if (expert_only) {
      probs = expert_prob(z);
    } else {
      const auto alphas = gather_alphas(features, classes, idx);
      probs = mixture_prob(mixture_logit(z, alphas, gates));
    }
    out.insert(out.end(), probs.values().begin(), probs.values().end());
  }
  return out;
}

std::vector<std::int32_t> predict(const ExpertParams& expert, const MixtureGates& gates,
                                  const FeatureTable& features, std::span<const EncodedExample> examples) {
  const auto classes = expert.config.num_classes;
  const auto probs = mixture_distributions(expert, gates, features, examples);
  std::vector<std::int32_t> out(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto* row = probs.data() + i * classes;
    out[i] = static_cast<std::int32_t>(std::max_element(row, row + classes) - row);
  }
  return out;
}

double evaluate(const ExpertParams& expert, const MixtureGates& gates, const FeatureTable& features,
                std::span<const EncodedExample> examples) {
  if (examples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  const auto labels = labels_of(examples);
  return error_rate(predict(expert, gates, features, examples), labels);
}

double evaluate_expert(const ExpertParams& expert, std::span<const EncodedExample> examples) {
  return evaluate(expert, MixtureGates{}, {}, examples);
}

Summary summarize(std::span<const double> values) {
  Summary s;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Stage 1

ExpertStage train_expert(const PreparedData& data, const TrainConfig& config, std::uint64_t seed,
                         const EpochHook& hook) {
  if (data.train.empty()) throw std::invalid_argument("train_expert: no labeled training data");
  const auto start = Clock::now();
  auto params = ExpertParams::init(expert_config(config, data), derive_seed(seed, "expert"));
  Rng shuffle(derive_seed(seed, "expert-shuffle"));
  Rng dropout(derive_seed(seed, "expert-dropout"));
  Rng* dropout_rng = config.dropout > 0.0 ? &dropout : nullptr;
  Adam adam(tensors_of(params.named()), adam_config(config, config.learning_rate));

  ExpertStage out{params.clone(), {}};
  out.record.stage = "expert";
  std::optional<double> best;
  for (std::size_t epoch = 1; epoch <= config.expert_epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    const auto batches = batch_iter(data.train, config.batch_size, shuffle);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      auto loss = supervised_loss(batches[b].expert, batches[b].labels, params, dropout_rng);
      check_finite(loss.item(), "expert", epoch, b + 1);
      loss_sum += loss.item();
      loss.backward();
      adam.step();
      rec.tokens += expert_tokens(batches[b]);
    }
    rec.loss = loss_sum / static_cast<double>(batches.size());
    rec.wall_ms = elapsed_ms(epoch_start);
    if (!data.dev.empty()) rec.dev_error = evaluate_expert(params, data.dev);
    // Without dev data the last epoch is kept.
    const double score = rec.dev_error.value_or(0.0);
    if (!best || score < *best || data.dev.empty()) {
      best = score;
      out.params = params.clone();
      out.record.selected = epoch;
    }
    progress("[seed ", seed, "] expert epoch ", epoch, " loss ", rec.loss, " dev ",
             rec.dev_error ? std::to_string(*rec.dev_error) : std::string("-"));
    out.record.epochs.push_back(rec);
    if (hook) hook(epoch, params.named());
  }
  set_trainable(out.params.named(), false);
  if (!data.test.empty()) out.record.test_error = evaluate_expert(out.params, data.test);
  out.record.wall_ms = elapsed_ms(start);
  return out;
}

// ---------------------------------------------------------------------------
// Stage 2

namespace {

// Row entropies of the cached targets.
std::vector<double> target_entropies(std::span<const float> targets, std::size_t classes) {
  std::vector<double> out(targets.size() / classes, 0.0);
  for (std::size_t r = 0; r < out.size(); ++r) {
    for (std::size_t y = 0; y < classes; ++y) {
      const double p = targets[r * classes + y];
      if (p > 0.0) out[r] -= p * std::log(p);
    }
  }
  return out;
}

struct KlTally {
  double cross_entropy = 0.0;
  double entropy = 0.0;
  std::size_t windows = 0;
};

}  // namespace

ImitatorStage train_imitators(std::span<const EncodedExample> unlabeled, std::span<const float> targets,
                              const ImitatorConfig& base, const TrainConfig& config, std::uint64_t seed,
                              std::span<const std::size_t> windows, ImitatorSchedule schedule,
                              const EpochHook& hook) {
  const auto classes = base.num_classes;
  if (targets.size() != unlabeled.size() * classes) {
    throw ShapeError("train_imitators: " + std::to_string(targets.size()) + " target values for " +
                     std::to_string(unlabeled.size()) + " inputs");
  }
  if (windows.empty()) throw std::invalid_argument("train_imitators: no window sizes");
  const auto start = Clock::now();

  ImitatorStage out;
  out.record.stage = "imitators";
  for (auto c : windows) {
    auto ic = base;
    ic.window = c;
    out.imitators.push_back(ImitatorParams::init(ic, derive_seed(seed, "imitator", c)));
  }

  const std::vector<float> table(targets.begin(), targets.end());
  const auto entropies = target_entropies(targets, classes);
  out.record.epochs.resize(config.imitator_epochs);
  std::vector<KlTally> tallies(config.imitator_epochs);
  std::vector<double> loss_sums(config.imitator_epochs, 0.0);
  std::size_t batches_per_epoch = 0;

  auto run_group = [&](const std::vector<std::size_t>& members) {
    Rng shuffle(derive_seed(seed, "imitator-shuffle"));
    std::vector<Tensor> tensors;
    std::vector<const ImitatorParams*> views;
    ParamList named;
    for (auto m : members) {
      const auto n = out.imitators[m].named();
      named.insert(named.end(), n.begin(), n.end());
      views.push_back(&out.imitators[m]);
    }
    Adam adam(tensors_of(named), adam_config(config, config.learning_rate));
    for (std::size_t epoch = 1; epoch <= config.imitator_epochs; ++epoch) {
      const auto epoch_start = Clock::now();
      auto& rec = out.record.epochs[epoch - 1];
      auto& tally = tallies[epoch - 1];
      const auto batches = batch_iter(unlabeled, config.batch_size, shuffle);
      batches_per_epoch = batches.size();
      double group_loss = 0.0;
      for (std::size_t b = 0; b < batches.size(); ++b) {
        const auto& batch = batches[b];
        auto loss = imitation_loss(batch.imitator, gather_rows(table, classes, batch.indices), views);
        const double value = loss.item();
        check_finite(value, "imitators", epoch, b + 1);
        group_loss += value;
        tally.cross_entropy += value * static_cast<double>(batch.indices.size());
        for (std::size_t k = 0; k < batch.indices.size(); ++k) {
          const auto count = batch.imitator[k].size() * members.size();
          tally.entropy += static_cast<double>(count) * entropies[batch.indices[k]];
          tally.windows += count;
        }
        loss.backward();
        adam.step();
        rec.tokens += imitator_tokens(batch);
      }
      loss_sums[epoch - 1] += group_loss;
      rec.wall_ms += elapsed_ms(epoch_start);
      progress("[seed ", seed, "] imitators c=", join_windows(selected_windows([&] {
                 std::vector<ImitatorParams> v;
                 for (auto m : members) v.push_back(out.imitators[m]);
                 return v;
               }())),
               " epoch ", epoch, " loss ", group_loss / static_cast<double>(std::max<std::size_t>(1, batches.size())));
      if (hook) hook(epoch, named);
    }
  };

  if (schedule == ImitatorSchedule::kJoint) {
    std::vector<std::size_t> all(out.imitators.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    run_group(all);
  } else {
    for (std::size_t i = 0; i < out.imitators.size(); ++i) run_group({i});
  }

  for (std::size_t e = 0; e < out.record.epochs.size(); ++e) {
    auto& rec = out.record.epochs[e];
    rec.epoch = e + 1;
    rec.loss = batches_per_epoch ? loss_sums[e] / static_cast<double>(batches_per_epoch) : 0.0;
    if (tallies[e].windows > 0) {
      rec.window_kl = (tallies[e].cross_entropy - tallies[e].entropy) / static_cast<double>(tallies[e].windows);
    }
  }
  if (config.imitator_epochs > 0) out.record.selected = config.imitator_epochs;
  for (auto& im : out.imitators) set_trainable(im.named(), false);
  out.record.wall_ms = elapsed_ms(start);
  return out;
}

ImitatorStage train_imitators(std::span<const EncodedExample> unlabeled, const ExpertParams& expert,
                              const ImitatorConfig& base, const TrainConfig& config, std::uint64_t seed,
                              std::span<const std::size_t> windows, ImitatorSchedule schedule,
                              const EpochHook& hook) {
  const auto named = expert.named();
  require_frozen(named, "train_imitators");
  const auto before = digest(named);
  const auto targets = expert_distributions(expert, unlabeled);
  auto out = train_imitators(unlabeled, targets, base, config, seed, windows, schedule, hook);
  require_frozen(named, "train_imitators");
  if (digest(named) != before) {
    throw StageIsolationError("train_imitators: expert parameters changed during imitator training");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Features

FeatureTable imitator_features(std::span<const ImitatorParams> imitators,
                               std::span<const EncodedExample> examples) {
  NoGradGuard no_grad;
  FeatureTable out(imitators.size());
  const auto batches = batch_indices(examples.size(), kEvalBatch, nullptr);
  for (std::size_t i = 0; i < imitators.size(); ++i) {
    out[i].reserve(examples.size() * imitators[i].config.num_classes);
    for (const auto& idx : batches) {
      const auto batch = gather_batch(examples, idx);
      const auto alpha = imitator_logit(batch.imitator, imitators[i]);
      out[i].insert(out[i].end(), alpha.values().begin(), alpha.values().end());
    }
  }
  return out;
}

FeatureSet imitator_feature_set(const PreparedData& data, std::span<const ImitatorParams> imitators) {
  FeatureSet set;
  set.count = imitators.size();
  set.train = imitator_features(imitators, data.train);
  set.dev = imitator_features(imitators, data.dev);
  set.test = imitator_features(imitators, data.test);
  return set;
}

FeatureTable random_features(std::size_t num_classes, std::size_t count, std::uint64_t seed,
                             std::span<const EncodedExample> examples) {
  FeatureTable out(count);
  for (auto& t : out) t.reserve(examples.size() * num_classes);
  for (const auto& ex : examples) {
    const auto vecs = random_feature_logits(num_classes, count, seed, ex.expert);
    for (std::size_t i = 0; i < count; ++i) out[i].insert(out[i].end(), vecs[i].begin(), vecs[i].end());
  }
  return out;
}

FeatureSet random_feature_set(const PreparedData& data, std::size_t count, std::uint64_t seed) {
  FeatureSet set;
  set.count = count;
  set.train = random_features(data.num_classes, count, seed, data.train);
  set.dev = random_features(data.num_classes, count, seed, data.dev);
  set.test = random_features(data.num_classes, count, seed, data.test);
  return set;
}

// ---------------------------------------------------------------------------
// Stage 3

MixtureStage fine_tune(const PreparedData& data, const ExpertParams& start, const FeatureSet& features,
                       const TrainConfig& config, std::uint64_t seed, const std::string& stage_name,
                       const EpochHook& hook) {
  if (data.train.empty()) throw std::invalid_argument("fine_tune: no labeled training data");
  const auto begin = Clock::now();
  const auto classes = data.num_classes;
  auto expert = start.clone();
  set_trainable(expert.named(), true);
  MixtureGates gates = features.count > 0 ? MixtureGates::trainable(features.count) : MixtureGates{};

  auto named = expert.named();
  if (features.count > 0) {
    const auto g = gates.named();
    named.insert(named.end(), g.begin(), g.end());
  }
  Adam adam(tensors_of(named), adam_config(config, config.finetune_learning_rate));
  Rng shuffle(derive_seed(seed, "finetune-shuffle"));
  Rng dropout(derive_seed(seed, "finetune-dropout"));
  Rng* dropout_rng = config.dropout > 0.0 ? &dropout : nullptr;

  MixtureStage out{expert.clone(), features.count > 0 ? gates.clone() : MixtureGates{}, {}};
  out.record.stage = stage_name;
  std::optional<double> best;
  for (std::size_t epoch = 1; epoch <= config.finetune_epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    const auto batches = batch_iter(data.train, config.batch_size, shuffle);
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      Tensor loss;
      if (features.count > 0) {
        const auto alphas = gather_alphas(features.train, classes, batch.indices);
        loss = fine_tune_loss(batch.expert, batch.labels, expert, gates, alphas, dropout_rng);
      } else {
        loss = supervised_loss(batch.expert, batch.labels, expert, dropout_rng);
      }
      check_finite(loss.item(), stage_name, epoch, b + 1);
      loss_sum += loss.item();
      loss.backward();
      adam.step();
      rec.tokens += expert_tokens(batch);
    }
    rec.loss = loss_sum / static_cast<double>(batches.size());
    rec.wall_ms = elapsed_ms(epoch_start);
    if (!data.dev.empty()) rec.dev_error = evaluate(expert, gates, features.dev, data.dev);
    const double score = rec.dev_error.value_or(0.0);
    if (!best || score < *best || data.dev.empty()) {
      best = score;
      out.expert = expert.clone();
      if (features.count > 0) out.gates = gates.clone();
      out.record.selected = epoch;
    }
    progress("[seed ", seed, "] ", stage_name, " epoch ", epoch, " loss ", rec.loss, " dev ",
             rec.dev_error ? std::to_string(*rec.dev_error) : std::string("-"));
    out.record.epochs.push_back(rec);
    if (hook) hook(epoch, named);
  }
  set_trainable(out.expert.named(), false);
  if (out.gates.size() > 0) set_trainable(out.gates.named(), false);
  if (!data.test.empty()) out.record.test_error = evaluate(out.expert, out.gates, features.test, data.test);
  out.record.wall_ms = elapsed_ms(begin);
  return out;
}

MixtureStage fine_tune(const PreparedData& data, const ExpertParams& start,
                       std::span<const ImitatorParams> imitators, const TrainConfig& config,
                       std::uint64_t seed, const EpochHook& hook) {
  const auto named = imitator_params(imitators);
  require_frozen(named, "fine_tune");
  const auto before = digest(named);
  const auto features = imitator_feature_set(data, imitators);
  auto out = fine_tune(data, start, features, config, seed, "finetune", hook);
  require_frozen(named, "fine_tune");
  if (digest(named) != before) {
    throw StageIsolationError("fine_tune: imitator parameters changed during fine-tuning");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiments

void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task) {
  jobs = std::max<std::size_t>(1, std::min(jobs, count));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (;;) {
        const auto i = next.fetch_add(1);
        if (i >= count) return;
        {
          std::lock_guard lock(error_mutex);
          if (error) return;
        }
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (error) std::rethrow_exception(error);
}

ProtocolResult run_protocol(const PreparedData& data, const TrainConfig& config, bool random_control) {
  const auto seeds = config.seed_list();
  if (seeds.empty()) throw std::invalid_argument("run_protocol: need at least one seed");
  const auto windows = config.windows();
  ProtocolResult result;
  result.runs.resize(seeds.size());
  parallel_for(seeds.size(), config.jobs, [&](std::size_t k) {
    const auto seed = seeds[k];
    auto& run = result.runs[k];
    run.seed = seed;

    const auto expert = train_expert(data, config, seed);
    run.expert = expert.record;
    run.expert_error = expert.record.test_error.value_or(0.0);

    const auto named = expert.params.named();
    run.expert_digest_before = digest(named);
    const auto imitators = train_imitators(data.unlabeled, expert.params, imitator_config(config, data, 1),
                                           config, seed, windows);
    run.expert_digest_after = digest(named);
    run.imitators = imitators.record;

    const auto phi = imitator_params(imitators.imitators);
    run.imitator_digest_before = digest(phi);
    const auto mixture = fine_tune(data, expert.params, imitators.imitators, config, seed);
    run.imitator_digest_after = digest(phi);
    run.finetune = mixture.record;
    run.mixture_error = mixture.record.test_error.value_or(0.0);

    if (random_control) {
      const auto control = fine_tune(data, expert.params, random_feature_set(data, windows.size(), seed),
                                     config, seed, "finetune-random");
      run.finetune_random = control.record;
      run.random_error = control.record.test_error.value_or(0.0);
    }
  });

  std::vector<double> e, m, r;
  for (const auto& run : result.runs) {
    e.push_back(run.expert_error);
    m.push_back(run.mixture_error);
    if (run.random_error) r.push_back(*run.random_error);
  }
  result.expert = summarize(e);
  result.mixture = summarize(m);
  if (random_control) result.random = summarize(r);
  return result;
}

namespace {

std::vector<EncodedExample> take(std::span<const EncodedExample> examples, std::span<const std::size_t> idx) {
  std::vector<EncodedExample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(examples[i]);
  return out;
}

std::vector<float> take_rows(std::span<const float> table, std::size_t cols, std::span<const std::size_t> idx) {
  std::vector<float> out;
  out.reserve(idx.size() * cols);
  for (auto i : idx) out.insert(out.end(), table.begin() + static_cast<std::ptrdiff_t>(i * cols),
                                table.begin() + static_cast<std::ptrdiff_t>((i + 1) * cols));
  return out;
}

void append(std::vector<CsvRow>& dst, std::vector<CsvRow> src) {
  dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
}

void finish_points(std::vector<CurvePoint>& points, const std::vector<std::vector<double>>& errors) {
  for (std::size_t p = 0; p < points.size(); ++p) {
    points[p].errors = errors[p];
    points[p].summary = summarize(errors[p]);
  }
}

}  // namespace

ExperimentResult sweep_unlabeled(const PreparedData& data, const TrainConfig& config,
                                 std::span<const std::size_t> sizes) {
  if (sizes.empty()) throw std::invalid_argument("sweep_unlabeled: no sizes");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] > data.unlabeled.size()) {
      throw std::invalid_argument("sweep_unlabeled: size " + std::to_string(sizes[i]) + " exceeds the " +
                                  std::to_string(data.unlabeled.size()) + " unlabeled texts");
    }
    if (i > 0 && sizes[i] <= sizes[i - 1]) {
      throw std::invalid_argument("sweep_unlabeled: sizes must be strictly ascending");
    }
  }
  const auto seeds = config.seed_list();
  const auto windows = config.windows();
  const auto classes = data.num_classes;

  // One permutation shared by every seed; each size keeps a prefix in
  // original order, so the full size reproduces the unsampled run.
  std::vector<std::size_t> order(data.unlabeled.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng pick(derive_seed(config.seed, "unlabeled-subsample"));
  std::shuffle(order.begin(), order.end(), pick);

  ExperimentResult result;
  for (auto s : sizes) {
    CurvePoint p;
    p.label = std::to_string(s);
    p.size = s;
    p.windows = windows;
    result.points.push_back(p);
  }
  std::vector<std::vector<double>> errors(sizes.size(), std::vector<double>(seeds.size()));
  std::vector<std::vector<CsvRow>> rows(seeds.size());

  parallel_for(seeds.size(), config.jobs, [&](std::size_t k) {
    const auto seed = seeds[k];
    const auto seed_text = std::to_string(seed);
    const auto expert = train_expert(data, config, seed);
    append(rows[k], stage_rows("sweep", seed_text, expert.record, config.record_timing));
    const auto before = digest(expert.params.named());
    const auto targets = expert_distributions(expert.params, data.unlabeled);
    for (std::size_t p = 0; p < sizes.size(); ++p) {
      std::vector<std::size_t> idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sizes[p]));
      std::sort(idx.begin(), idx.end());
      const auto subset = take(data.unlabeled, idx);
      const auto sub_targets = take_rows(targets, classes, idx);
      const auto imitators = train_imitators(subset, sub_targets, imitator_config(config, data, 1), config, seed,
                                             windows);
      const auto mixture = fine_tune(data, expert.params, imitators.imitators, config, seed);
      const auto name = "sweep-" + std::to_string(sizes[p]);
      append(rows[k], stage_rows(name, seed_text, imitators.record, config.record_timing));
      append(rows[k], stage_rows(name, seed_text, mixture.record, config.record_timing));
      errors[p][k] = mixture.record.test_error.value_or(0.0);
    }
    if (digest(expert.params.named()) != before) {
      throw StageIsolationError("sweep_unlabeled: expert parameters changed");
    }
  });
  finish_points(result.points, errors);
  for (auto& r : rows) append(result.records, std::move(r));
  return result;
}

ExperimentResult ablate_windows(const PreparedData& data, const TrainConfig& config,
                                const std::vector<std::vector<std::size_t>>& subsets) {
  if (subsets.empty()) throw std::invalid_argument("ablate_windows: no subsets");
  std::set<std::size_t> all;
  for (const auto& s : subsets) {
    if (s.empty()) throw std::invalid_argument("ablate_windows: empty window subset");
    const std::set<std::size_t> distinct(s.begin(), s.end());
    if (distinct.size() != s.size()) throw std::invalid_argument("ablate_windows: repeated window size");
    if (distinct.count(0)) throw std::invalid_argument("ablate_windows: window sizes start at 1");
    all.insert(s.begin(), s.end());
  }
  const std::vector<std::size_t> windows(all.begin(), all.end());
  const auto seeds = config.seed_list();

  ExperimentResult result;
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    CurvePoint p;
    p.label = i < 26 ? std::string(1, static_cast<char>('A' + i)) : "S" + std::to_string(i + 1);
    p.windows = subsets[i];
    p.size = data.unlabeled.size();
    result.points.push_back(p);
  }
  std::vector<std::vector<double>> errors(subsets.size(), std::vector<double>(seeds.size()));
  std::vector<std::vector<CsvRow>> rows(seeds.size());

  parallel_for(seeds.size(), config.jobs, [&](std::size_t k) {
    const auto seed = seeds[k];
    const auto seed_text = std::to_string(seed);
    const auto expert = train_expert(data, config, seed);
    append(rows[k], stage_rows("ablate", seed_text, expert.record, config.record_timing));
    const auto imitators = train_imitators(data.unlabeled, expert.params, imitator_config(config, data, 1),
                                           config, seed, windows);
    append(rows[k], stage_rows("ablate", seed_text, imitators.record, config.record_timing));
    const auto features = imitator_feature_set(data, imitators.imitators);
    for (std::size_t p = 0; p < subsets.size(); ++p) {
      FeatureSet chosen;
      chosen.count = subsets[p].size();
      for (auto c : subsets[p]) {
        const auto at = static_cast<std::size_t>(std::find(windows.begin(), windows.end(), c) - windows.begin());
        chosen.train.push_back(features.train[at]);
        chosen.dev.push_back(features.dev[at]);
        chosen.test.push_back(features.test[at]);
      }
      const auto mixture = fine_tune(data, expert.params, chosen, config, seed, "finetune");
      append(rows[k], stage_rows("ablate-" + result.points[p].label, seed_text, mixture.record,
                                 config.record_timing));
      errors[p][k] = mixture.record.test_error.value_or(0.0);
    }
  });
  finish_points(result.points, errors);
  for (auto& r : rows) append(result.records, std::move(r));
  return result;
}

std::vector<ThroughputRow> bench_throughput(const PreparedData& data, const TrainConfig& config,
                                            double seconds_per_row, std::size_t warmup) {
  if (data.train.empty()) throw std::invalid_argument("bench_throughput: no labeled training data");
  const std::span<const EncodedExample> text = data.unlabeled.empty()
                                                   ? std::span<const EncodedExample>(data.train)
                                                   : std::span<const EncodedExample>(data.unlabeled);
  const auto seed = config.seed;

  // Runs `step` on successive batches until the time budget is spent.
  auto measure = [&](std::span<const EncodedExample> examples, const std::function<std::size_t(const Batch&)>& step) {
    Rng shuffle(derive_seed(seed, "bench-shuffle"));
    auto batches = batch_iter(examples, config.batch_size, shuffle);
    std::size_t cursor = 0;
    auto next = [&]() -> const Batch& {
      if (cursor == batches.size()) {
        batches = batch_iter(examples, config.batch_size, shuffle);
        cursor = 0;
      }
      return batches[cursor++];
    };
    for (std::size_t i = 0; i < warmup; ++i) step(next());
    std::size_t tokens = 0;
    const auto start = Clock::now();
    do {
      tokens += step(next());
    } while (elapsed_ms(start) < seconds_per_row * 1000.0);
    return static_cast<double>(tokens) / (elapsed_ms(start) / 1000.0);
  };

  std::vector<ThroughputRow> rows;
  {
    auto params = ExpertParams::init(expert_config(config, data), derive_seed(seed, "expert"));
    Adam adam(tensors_of(params.named()), adam_config(config, config.learning_rate));
    Rng dropout(derive_seed(seed, "expert-dropout"));
    Rng* dropout_rng = config.dropout > 0.0 ? &dropout : nullptr;
    const auto tps = measure(data.train, [&](const Batch& b) {
      auto loss = supervised_loss(b.expert, b.labels, params, dropout_rng);
      loss.backward();
      adam.step();
      return expert_tokens(b);
    });
    rows.push_back({"expert", {}, tps, 1.0});
    progress("bench expert ", tps, " tokens/s");
  }

  const auto targets = [&] {
    auto expert = ExpertParams::init(expert_config(config, data), derive_seed(seed, "expert"));
    return expert_distributions(expert, text);
  }();
  for (std::size_t k = 1; k <= config.num_imitators; ++k) {
    std::vector<ImitatorParams> imitators;
    std::vector<const ImitatorParams*> views;
    ParamList named;
    std::vector<std::size_t> windows;
    for (std::size_t c = 1; c <= k; ++c) {
      imitators.push_back(ImitatorParams::init(imitator_config(config, data, c), derive_seed(seed, "imitator", c)));
      windows.push_back(c);
    }
    for (const auto& im : imitators) {
      views.push_back(&im);
      const auto n = im.named();
      named.insert(named.end(), n.begin(), n.end());
    }
    Adam adam(tensors_of(named), adam_config(config, config.learning_rate));
    const auto tps = measure(text, [&](const Batch& b) {
      auto loss = imitation_loss(b.imitator, gather_rows(targets, data.num_classes, b.indices), views);
      loss.backward();
      adam.step();
      return imitator_tokens(b);
    });
    rows.push_back({"imitators", windows, tps, tps / rows.front().tokens_per_sec});
    progress("bench imitators c=", join_windows(windows), " ", tps, " tokens/s");
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV

const std::vector<std::string>& record_header() {
  static const std::vector<std::string> header = {"experiment", "seed",           "stage",  "epoch",
                                                  "dev_error",  "test_error",     "tokens_per_sec", "wall_ms"};
  return header;
}

std::vector<CsvRow> stage_rows(const std::string& experiment, const std::string& seed,
                               const StageRecord& record, bool timing) {
  std::vector<CsvRow> rows;
  for (const auto& e : record.epochs) {
    std::optional<double> test;
    if (record.selected && *record.selected == e.epoch) test = record.test_error;
    std::optional<double> tps, ms;
    if (timing) {
      ms = e.wall_ms;
      tps = e.wall_ms > 0 ? static_cast<double>(e.tokens) / (e.wall_ms / 1000.0) : 0.0;
    }
    rows.push_back({experiment, seed, record.stage, std::to_string(e.epoch), format_fixed(e.dev_error, 4),
                    format_fixed(test, 4), format_fixed(tps, 1), format_fixed(ms, 1)});
  }
  return rows;
}

std::vector<CsvRow> protocol_rows(const ProtocolResult& result, bool timing) {
  std::vector<CsvRow> rows;
  for (const auto& run : result.runs) {
    const auto seed = std::to_string(run.seed);
    append(rows, stage_rows("protocol", seed, run.expert, timing));
    append(rows, stage_rows("protocol", seed, run.imitators, timing));
    append(rows, stage_rows("protocol", seed, run.finetune, timing));
    if (run.random_error) append(rows, stage_rows("protocol", seed, run.finetune_random, timing));
  }
  auto summary = [&](const std::string& stage, const Summary& s) {
    rows.push_back({"protocol", "mean", stage, "", "", format_fixed(s.mean, 4), "", ""});
    rows.push_back({"protocol", "std", stage, "", "", format_fixed(s.stddev, 4), "", ""});
  };
  summary("expert", result.expert);
  summary("finetune", result.mixture);
  if (result.random) summary("finetune-random", *result.random);
  return rows;
}

}  // namespace mein
