// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "grad_check.hpp"
#include "mein/checkpoint.hpp"
#include "mein/pipeline.hpp"
#include "op_cases.hpp"

using namespace mein;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(double v, int decimals = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

bool report(int number, const std::string& title, double budget_s, const std::function<Outcome()>& body) {
  const auto start = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double took = seconds_since(start);
  const bool in_time = took < budget_s;
  const bool pass = o.pass && in_time;
  std::cout << "criterion " << number << " (" << title << "): " << (pass ? "PASS" : "FAIL") << " - " << o.detail
            << " [" << fmt(took, 1) << " s, budget " << fmt(budget_s, 0) << " s"
            << (in_time ? "" : ", over budget") << "]" << std::endl;
  return pass;
}

const fs::path& scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "mein_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

bool same_floats(const Tensor& a, const Tensor& b) {
  return a.size() == b.size() && std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(float)) == 0;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  constexpr int kInstances = 100;
  const auto generators = testing::all_generators();
  std::mt19937_64 rng(20240601);
  double worst = 0.0;
  std::string worst_case;
  std::size_t elements = 0;
  std::vector<std::string> failing;
  for (const auto& gen : generators) {
    double gen_worst = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      const auto c = gen.make(rng);
      const auto r = testing::grad_check(c.fn, c.inputs, rng());
      elements += r.checked;
      if (r.max_rel_error > gen_worst) gen_worst = r.max_rel_error;
      if (r.max_rel_error > worst) {
        worst = r.max_rel_error;
        worst_case = gen.name + " (" + r.worst + ")";
      }
    }
    if (!(gen_worst < 1e-4)) failing.push_back(gen.name);
  }
  std::string detail = std::to_string(generators.size()) + " ops/composites x " + std::to_string(kInstances) +
                       " instances, " + std::to_string(elements) + " partials, max rel err " + sci(worst);
  if (!failing.empty()) {
    detail += ", failing:";
    for (const auto& f : failing) detail += " " + f;
    detail += "; worst " + worst_case;
  }
  return {failing.empty(), detail};
}

Outcome reduction_identity() {
  double max_diff = 0.0;
  bool errors_equal = true;
  bool loss_equal = true;
  std::size_t checked = 0;
  for (std::uint64_t corpus_seed : {1u, 7u}) {
    auto config = TrainConfig::desk();
    config.synth.seed = corpus_seed;
    config.synth.unlabeled = 500;
    config.expert_epochs = 3;
    const auto data = prepare_data(load_or_generate(config), config);
    const auto expert = train_expert(data, config, corpus_seed);
    auto imitators_config = config;
    imitators_config.imitator_epochs = 1;
    const auto imitators = train_imitators(data.unlabeled, expert.params, imitator_config(config, data, 1),
                                           imitators_config, corpus_seed, config.windows());
    const auto gates = MixtureGates::disabled(config.num_imitators);
    for (const auto& features : {imitator_feature_set(data, imitators.imitators),
                                 random_feature_set(data, config.num_imitators, corpus_seed)}) {
      const auto p = mixture_distributions(expert.params, gates, features.test, data.test);
      const auto q = expert_distributions(expert.params, data.test);
      for (std::size_t i = 0; i < p.size(); ++i) {
        max_diff = std::max(max_diff, std::fabs(static_cast<double>(p[i]) - static_cast<double>(q[i])));
      }
      checked += p.size();
      errors_equal = errors_equal && evaluate(expert.params, gates, features.test, data.test) ==
                                         evaluate_expert(expert.params, data.test);

      const auto batch = gather_batch(data.train, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
      std::vector<Tensor> alphas;
      for (const auto& table : features.train) {
        std::vector<float> rows(table.begin(), table.begin() + 8 * static_cast<std::ptrdiff_t>(data.num_classes));
        alphas.push_back(Tensor::constant({8, data.num_classes}, std::move(rows)));
      }
      const float mixed = fine_tune_loss(batch.expert, batch.labels, expert.params, gates, alphas).item();
      const float plain = supervised_loss(batch.expert, batch.labels, expert.params).item();
      loss_equal = loss_equal && std::fabs(mixed - plain) <= 1e-6f;
    }
  }
  const bool pass = max_diff <= 1e-12 && errors_equal && loss_equal;
  return {pass, "2 corpora x {trained, random} features, " + std::to_string(checked) +
                    " probabilities, max |mixture - expert| " + sci(max_diff) +
                    (errors_equal ? ", test errors identical" : ", test errors DIFFER") +
                    (loss_equal ? ", losses equal" : ", losses DIFFER")};
}

Outcome stage_isolation() {
  auto config = TrainConfig::desk();
  config.synth.unlabeled = 1000;
  config.expert_epochs = 2;
  config.imitator_epochs = 1;
  config.finetune_epochs = 2;
  const auto data = prepare_data(load_or_generate(config), config);
  const auto expert = train_expert(data, config, 1);
  const auto theta_before = digest(expert.params.named());
  const auto stage2 = train_imitators(data.unlabeled, expert.params, imitator_config(config, data, 1), config, 1,
                                      config.windows());
  const auto theta_after = digest(expert.params.named());
  ParamList phi;
  for (const auto& im : stage2.imitators) {
    const auto n = im.named();
    phi.insert(phi.end(), n.begin(), n.end());
  }
  const auto phi_before = digest(phi);
  const auto stage3 = fine_tune(data, expert.params, stage2.imitators, config, 1);
  const auto phi_after = digest(phi);
  const bool moved = digest(stage3.expert.named()) != theta_before;
  const bool pass = theta_before == theta_after && phi_before == phi_after && moved;
  return {pass, "expert digest " + std::string(theta_before == theta_after ? "unchanged" : "CHANGED") +
                    " over stage 2, imitator digest " + (phi_before == phi_after ? "unchanged" : "CHANGED") +
                    " over stage 3, fine-tuned copy " + (moved ? "moved" : "did not move")};
}

Outcome imitation_convergence() {
  auto config = TrainConfig::desk();
  config.synth.noise = 0.0;
  config.synth.lexicon_size = 1;
  config.synth.max_span = 1;
  config.synth.distractor_rate = 0.0;
  config.synth.max_gap = 1;
  config.synth.unlabeled = 2000;
  config.imitator_epochs = 50;
  const auto data = prepare_data(load_or_generate(config), config);
  const auto expert = train_expert(data, config, 1);
  const auto targets = expert_distributions(expert.params, data.unlabeled);

  // Exact mean KL over all of D_u after each epoch.
  std::vector<double> kl;
  const auto hook = [&](std::size_t, const ParamList& params) {
    auto im = ImitatorParams::init(imitator_config(config, data, 1), 0);
    auto dst = im.named();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      std::copy(params[i].tensor.values().begin(), params[i].tensor.values().end(),
                dst[i].tensor.mutable_values().begin());
    }
    NoGradGuard no_grad;
    double windows = 0, total = 0;
    for (std::size_t start = 0; start < data.unlabeled.size(); start += 256) {
      std::vector<std::size_t> idx;
      for (std::size_t k = start; k < std::min(start + 256, data.unlabeled.size()); ++k) idx.push_back(k);
      const auto batch = gather_batch(data.unlabeled, idx);
      std::vector<float> rows;
      for (auto k : idx) {
        rows.insert(rows.end(), targets.begin() + static_cast<std::ptrdiff_t>(k * data.num_classes),
                    targets.begin() + static_cast<std::ptrdiff_t>((k + 1) * data.num_classes));
      }
      const auto out = imitator_forward(batch.imitator, im);
      const double n = static_cast<double>(out.log_probs.rows());
      total += mean_window_kl(out, Tensor::constant({idx.size(), data.num_classes}, rows)) * n;
      windows += n;
    }
    kl.push_back(total / windows);
  };
  const std::vector<std::size_t> windows{1};
  train_imitators(data.unlabeled, targets, imitator_config(config, data, 1), config, 1, windows,
                  ImitatorSchedule::kPerImitator, hook);
  std::size_t reached = 0;
  for (std::size_t e = 0; e < kl.size(); ++e) {
    if (kl[e] < 0.05) {
      reached = e + 1;
      break;
    }
  }
  const double best = *std::min_element(kl.begin(), kl.end());
  return {reached > 0, "expert test error " + fmt(expert.record.test_error.value_or(-1)) + "%, mean window KL " +
                           fmt(kl.front(), 4) + " after epoch 1, min " + fmt(best, 4) +
                           (reached ? ", below 0.05 at epoch " + std::to_string(reached) : ", never below 0.05")};
}

TrainConfig protocol_config() {
  auto config = TrainConfig::desk();
  config.jobs = 1;
  return config;
}

const PreparedData& protocol_data() {
  static const PreparedData data = [] {
    const auto config = protocol_config();
    return prepare_data(load_or_generate(config), config);
  }();
  return data;
}

std::string summary_text(const Summary& s) { return fmt(s.mean) + " +- " + fmt(s.stddev); }

Outcome ssl_gain(const ProtocolResult& r) {
  const double expert = r.expert.mean, mixture = r.mixture.mean, random = r.random->mean;
  const bool pass = mixture <= expert - 1.0 && mixture <= random;
  return {pass, std::to_string(r.runs.size()) + " seeds: expert " + summary_text(r.expert) + "%, expert+IMN " +
                    summary_text(r.mixture) + "%, random control " + summary_text(*r.random) + "%, gain " +
                    fmt(expert - mixture) + " pt"};
}

Outcome more_data() {
  const auto config = protocol_config();
  const std::vector<std::size_t> sizes{500, 10000};
  const auto r = sweep_unlabeled(protocol_data(), config, sizes);
  const auto& small = r.points[0].summary;
  const auto& full = r.points[1].summary;
  return {full.mean <= small.mean,
          "5 seeds: 500 unlabeled " + summary_text(small) + "%, 10000 unlabeled " + summary_text(full) + "%"};
}

Outcome window_ablation() {
  const auto config = protocol_config();
  const auto r = ablate_windows(protocol_data(), config, {{1}, {1, 2}, {1, 2, 3}, {1, 2, 3, 4}});
  std::string detail = "5 seeds:";
  for (const auto& p : r.points) detail += " " + p.label + " " + summary_text(p.summary) + "%";
  const double a = r.points.front().summary.mean, d = r.points.back().summary.mean;
  detail += ", D - A = " + fmt(d - a) + " pt";
  return {d <= a + 0.5, detail};
}

Outcome throughput() {
  const auto config = protocol_config();
  const auto rows = bench_throughput(protocol_data(), config, 2.0);
  const auto& expert = rows.at(0);
  const auto& c1 = rows.at(1);
  const double ratio = c1.tokens_per_sec / expert.tokens_per_sec;
  std::string detail = "expert " + fmt(expert.tokens_per_sec, 0) + " tok/s, imitator c=1 " +
                       fmt(c1.tokens_per_sec, 0) + " tok/s, ratio " + fmt(ratio) + "x";
  for (std::size_t i = 2; i < rows.size(); ++i) {
    detail += ", c=1.." + std::to_string(rows[i].windows.size()) + " " + fmt(rows[i].relative_speed) + "x";
  }
  return {ratio >= 5.0, detail};
}

Outcome tokenizer_and_persistence() {
  auto config = TrainConfig::desk();
  const auto corpus = load_or_generate(config);
  const auto data = prepare_data(corpus, config);
  SyntheticSpec fresh = config.synth;
  fresh.seed = 99;
  fresh.train = 1000;
  fresh.dev = fresh.test = fresh.unlabeled = 0;
  const auto sentences = generate_synthetic(fresh).corpus.train;
  std::size_t lossless = 0;
  for (const auto& s : sentences) lossless += data.bpe.decode(data.bpe.encode(s.text)) == s.text;

  // Save, load and compare forwards bitwise.
  config.expert_epochs = 1;
  config.imitator_epochs = 1;
  config.finetune_epochs = 1;
  config.synth.unlabeled = 500;
  const auto small = prepare_data(load_or_generate(config), config);
  const auto expert = train_expert(small, config, 1);
  const auto imitators = train_imitators(small.unlabeled, expert.params, imitator_config(config, small, 1), config, 1,
                                         config.windows());
  const auto mixture = fine_tune(small, expert.params, imitators.imitators, config, 1);
  ParamList all = mixture.expert.named();
  for (const auto& im : imitators.imitators) {
    const auto n = im.named();
    all.insert(all.end(), n.begin(), n.end());
  }
  const auto m = mixture.gates.named();
  all.insert(all.end(), m.begin(), m.end());
  const auto path = scratch() / "mixture.ckpt";
  save_checkpoint(path, StageTag::kMixture, all, config.to_text());
  const auto ck = load_checkpoint(path, StageTag::kMixture);

  auto expert2 = ExpertParams::init(expert_config(config, small), 123);
  restore(ck, expert2.named());
  auto gates2 = MixtureGates::disabled(config.num_imitators);
  restore(ck, gates2.named());
  std::vector<ImitatorParams> imitators2;
  for (auto c : config.windows()) {
    imitators2.push_back(ImitatorParams::init(imitator_config(config, small, c), 321));
    restore(ck, imitators2.back().named());
  }
  bool bitwise = true;
  for (std::size_t i = 0; i < all.size(); ++i) bitwise = bitwise && same_floats(all[i].tensor, ck.tensors[i].tensor);
  const auto batch = gather_batch(small.test, std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  NoGradGuard no_grad;
  bitwise = bitwise && same_floats(expert_forward(batch.expert, mixture.expert).logits,
                                   expert_forward(batch.expert, expert2).logits);
  for (std::size_t i = 0; i < imitators2.size(); ++i) {
    bitwise = bitwise && same_floats(imitator_logit(batch.imitator, imitators.imitators[i]),
                                     imitator_logit(batch.imitator, imitators2[i]));
  }
  const auto p1 = mixture_distributions(mixture.expert, mixture.gates, imitator_features(imitators.imitators, small.test),
                                        small.test);
  const auto p2 = mixture_distributions(expert2, gates2, imitator_features(imitators2, small.test), small.test);
  bitwise = bitwise && p1.size() == p2.size() && std::memcmp(p1.data(), p2.data(), p1.size() * sizeof(float)) == 0;
  const bool pass = lossless == sentences.size() && bitwise;
  return {pass, std::to_string(lossless) + "/" + std::to_string(sentences.size()) +
                    " sentences round-trip; checkpoint tensors and expert, imitator and mixture outputs " +
                    (bitwise ? "bitwise identical" : "DIFFER")};
}

fs::path write_protocol_csv(const ProtocolResult& r, const std::string& name) {
  const auto path = scratch() / name;
  write_csv(path, record_header(), protocol_rows(r, false));
  return path;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto want = [&](int n) { return wanted.empty() || wanted.count(n) > 0; };
  set_progress_sink(nullptr);

  bool all = true;
  if (want(1)) all &= report(1, "gradient oracle", 120, gradient_oracle);
  if (want(2)) all &= report(2, "reduction identity", 60, reduction_identity);
  if (want(3)) all &= report(3, "stage isolation", 60, stage_isolation);
  if (want(4)) all &= report(4, "imitation convergence", 120, imitation_convergence);

  std::optional<ProtocolResult> first;
  double first_seconds = 0.0;
  if (want(5) || want(10)) {
    const auto start = Clock::now();
    if (want(5)) {
      all &= report(5, "SSL gain", 600, [&] {
        first = run_protocol(protocol_data(), protocol_config());
        return ssl_gain(*first);
      });
    } else {
      first = run_protocol(protocol_data(), protocol_config());
    }
    first_seconds = seconds_since(start);
  }
  if (want(6)) all &= report(6, "more unlabeled data", 900, more_data);
  if (want(7)) all &= report(7, "window ablation", 1200, window_ablation);
  if (want(8)) all &= report(8, "throughput", 120, throughput);
  if (want(9)) all &= report(9, "tokenizer and persistence", 60, tokenizer_and_persistence);
  if (want(10)) {
    all &= report(10, "protocol reproducibility", 2 * 600.0 - first_seconds, [&] {
      const auto second = run_protocol(protocol_data(), protocol_config());
      const auto a = read_bytes(write_protocol_csv(*first, "protocol_first.csv"));
      const auto b = read_bytes(write_protocol_csv(second, "protocol_second.csv"));
      return Outcome{a == b && !a.empty(), "two 5-seed runs with one job, " + std::to_string(a.size()) +
                                                " CSV bytes each, " + (a == b ? "identical" : "DIFFERENT") +
                                                " (first run " + fmt(first_seconds, 0) + " s)"};
    });
  }
  return all ? 0 : 1;
}
