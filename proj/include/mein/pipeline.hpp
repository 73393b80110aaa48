#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mein/config.hpp"
#include "mein/data.hpp"
#include "mein/expert.hpp"
#include "mein/imitator.hpp"
#include "mein/mixture.hpp"
#include "mein/report.hpp"
#include "mein/tokenize.hpp"

namespace mein {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Progress lines go to `sink` (nullptr silences them). Thread-safe.
void set_progress_sink(std::ostream* sink);

struct PreparedData {
  std::size_t num_classes = 0;
  WordVocabulary words;
  BpeVocabulary bpe;
  std::vector<EncodedExample> train;
  std::vector<EncodedExample> dev;
  std::vector<EncodedExample> test;
  std::vector<EncodedExample> unlabeled;
};

/// Corpus from `data.path`, or generated from the [synth] section.
Corpus load_or_generate(const TrainConfig& config);

/// Builds V from train + unlabeled text and learns V' on the same text.
PreparedData prepare_data(const Corpus& corpus, const TrainConfig& config);
/// Encodes with existing vocabularies.
PreparedData prepare_data(const Corpus& corpus, const TrainConfig& config, WordVocabulary words,
                          BpeVocabulary bpe);

ExpertConfig expert_config(const TrainConfig& config, const PreparedData& data);
ImitatorConfig imitator_config(const TrainConfig& config, const PreparedData& data, std::size_t window);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::optional<double> dev_error;
  double loss = 0.0;                // mean training loss over batches
  std::optional<double> window_kl;  // imitator stage: mean KL per window
  std::size_t tokens = 0;
  double wall_ms = 0.0;
};

struct StageRecord {
  std::string stage;
  std::vector<EpochRecord> epochs;
  std::optional<std::size_t> selected;  // epoch whose parameters were kept
  std::optional<double> test_error;
  double wall_ms = 0.0;

  double tokens_per_sec() const;
};

/// Called after every epoch with the current parameters.
using EpochHook = std::function<void(std::size_t epoch, const ParamList& params)>;

struct ExpertStage {
  ExpertParams params;  // parameters of the selected epoch
  StageRecord record;
};

/// Stage 1: supervised training with gates disabled. The epoch with the
/// lowest dev error is kept (earliest on ties) and scored once on test.
ExpertStage train_expert(const PreparedData& data, const TrainConfig& config, std::uint64_t seed,
                         const EpochHook& hook = {});

/// Expert distributions for each example, row-major [n, |Y|].
std::vector<float> expert_distributions(const ExpertParams& expert,
                                        std::span<const EncodedExample> examples);

enum class ImitatorSchedule {
  kJoint,         // one optimizer over every imitator, summed loss
  kPerImitator,   // one optimizer per imitator, trained one after another
};

struct ImitatorStage {
  std::vector<ImitatorParams> imitators;  // parameters after the final epoch
  StageRecord record;
};

/// Stage 2 from cached expert distributions (`targets`, [n, |Y|]). `base`
/// supplies every imitator setting except the window.
/// Imitator c is initialized from (seed, c) alone and every imitator sees
/// the same batch order, so both schedules give the same parameters when
/// gradient clipping is off.
ImitatorStage train_imitators(std::span<const EncodedExample> unlabeled, std::span<const float> targets,
                              const ImitatorConfig& base, const TrainConfig& config, std::uint64_t seed,
                              std::span<const std::size_t> windows,
                              ImitatorSchedule schedule = ImitatorSchedule::kPerImitator,
                              const EpochHook& hook = {});

/// Stage 2 against a frozen expert. Throws StageIsolationError if the
/// expert's digest changes.
ImitatorStage train_imitators(std::span<const EncodedExample> unlabeled, const ExpertParams& expert,
                              const ImitatorConfig& base, const TrainConfig& config, std::uint64_t seed,
                              std::span<const std::size_t> windows,
                              ImitatorSchedule schedule = ImitatorSchedule::kPerImitator,
                              const EpochHook& hook = {});

// Imitator logits per input, one row-major [n, |Y|] table per imitator.
using FeatureTable = std::vector<std::vector<float>>;

struct FeatureSet {
  std::size_t count = 0;
  FeatureTable train;
  FeatureTable dev;
  FeatureTable test;
};

FeatureTable imitator_features(std::span<const ImitatorParams> imitators,
                               std::span<const EncodedExample> examples);
FeatureSet imitator_feature_set(const PreparedData& data, std::span<const ImitatorParams> imitators);

/// The "+IMN (Random)" stand-in: fixed normal vectors per input.
FeatureTable random_features(std::size_t num_classes, std::size_t count, std::uint64_t seed,
                             std::span<const EncodedExample> examples);
FeatureSet random_feature_set(const PreparedData& data, std::size_t count, std::uint64_t seed);

struct MixtureStage {
  ExpertParams expert;
  MixtureGates gates;
  StageRecord record;
};

/// Stage 3 over (expert, gates) from `start` with gates at 0, using fixed
/// imitator features.
MixtureStage fine_tune(const PreparedData& data, const ExpertParams& start, const FeatureSet& features,
                       const TrainConfig& config, std::uint64_t seed, const std::string& stage_name,
                       const EpochHook& hook = {});

/// Stage 3 with frozen imitators. Throws StageIsolationError if any
/// imitator's digest changes.
MixtureStage fine_tune(const PreparedData& data, const ExpertParams& start,
                       std::span<const ImitatorParams> imitators, const TrainConfig& config,
                       std::uint64_t seed, const EpochHook& hook = {});

/// Arg-max predictions of the mixture (of the expert alone when every gate
/// is disabled or there are no features).
std::vector<std::int32_t> predict(const ExpertParams& expert, const MixtureGates& gates,
                                  const FeatureTable& features, std::span<const EncodedExample> examples);

/// Mixture distributions, row-major [n, |Y|].
std::vector<float> mixture_distributions(const ExpertParams& expert, const MixtureGates& gates,
                                         const FeatureTable& features,
                                         std::span<const EncodedExample> examples);

/// 100 * misclassified / total. Throws std::invalid_argument when empty.
double error_rate(std::span<const std::int32_t> predictions, std::span<const std::int32_t> labels);

double evaluate(const ExpertParams& expert, const MixtureGates& gates, const FeatureTable& features,
                std::span<const EncodedExample> examples);
double evaluate_expert(const ExpertParams& expert, std::span<const EncodedExample> examples);

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation; 0 for a single value
};

Summary summarize(std::span<const double> values);

struct SeedRun {
  std::uint64_t seed = 0;
  StageRecord expert;
  StageRecord imitators;
  StageRecord finetune;
  StageRecord finetune_random;
  double expert_error = 0.0;
  double mixture_error = 0.0;
  std::optional<double> random_error;
  std::uint64_t expert_digest_before = 0;  // Theta' around stage 2
  std::uint64_t expert_digest_after = 0;
  std::uint64_t imitator_digest_before = 0;  // Phi around stage 3
  std::uint64_t imitator_digest_after = 0;
};

struct ProtocolResult {
  std::vector<SeedRun> runs;  // in seed order
  Summary expert;
  Summary mixture;
  std::optional<Summary> random;
};

/// Runs all three stages per seed, plus the random-feature control when
/// `random_control` is set. Seeds run on up to `config.jobs` threads.
ProtocolResult run_protocol(const PreparedData& data, const TrainConfig& config, bool random_control = true);

struct CurvePoint {
  std::string label;                // size or subset name
  std::vector<std::size_t> windows;  // subsets only
  std::size_t size = 0;              // unlabeled examples used
  std::vector<double> errors;        // per seed, seed order
  Summary summary;
};

struct ExperimentResult {
  std::vector<CurvePoint> points;
  std::vector<CsvRow> records;  // per-epoch rows for every seed and point
};

/// Stages 2-3 per unlabeled size from one stage-1 model per seed. Sizes use
/// nested, seed-fixed subsamples of D_u without replacement.
ExperimentResult sweep_unlabeled(const PreparedData& data, const TrainConfig& config,
                                 std::span<const std::size_t> sizes);

/// Stage 3 per window subset from one stage-1 model and one set of trained
/// imitators per seed.
ExperimentResult ablate_windows(const PreparedData& data, const TrainConfig& config,
                                const std::vector<std::vector<std::size_t>>& subsets);

struct ThroughputRow {
  std::string network;
  std::vector<std::size_t> windows;
  double tokens_per_sec = 0.0;
  double relative_speed = 0.0;  // versus the expert row
};

/// Forward + backward + update tokens/sec for expert training and for
/// imitator training with c = {1}, {1,2}, ..., after `warmup` batches.
std::vector<ThroughputRow> bench_throughput(const PreparedData& data, const TrainConfig& config,
                                            double seconds_per_row = 2.0, std::size_t warmup = 3);

// CSV rows

const std::vector<std::string>& record_header();

/// One row per epoch; the selected epoch carries the test error. Timing
/// columns stay empty unless `timing` is set.
std::vector<CsvRow> stage_rows(const std::string& experiment, const std::string& seed,
                               const StageRecord& record, bool timing);
std::vector<CsvRow> protocol_rows(const ProtocolResult& result, bool timing);

/// Runs `task(i)` for i in [0, count) on up to `jobs` threads; the first
/// exception is rethrown after all workers stop.
void parallel_for(std::size_t count, std::size_t jobs, const std::function<void(std::size_t)>& task);

}  // namespace mein
