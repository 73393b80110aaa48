#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "mein/data.hpp"

namespace mein {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::string profile = "desk";

  // [model]
  std::size_t embed_dim = 32;            // D
  std::size_t hidden_dim = 64;           // H
  std::size_t mlp_dim = 16;              // M
  std::size_t imitator_embed_dim = 32;
  std::size_t kernel_dim = 64;           // N
  std::size_t num_imitators = 4;         // I; imitator i sees c = i
  double dropout = 0.5;

  // [data]
  std::string data_path;  // empty: generate from [synth]
  std::size_t max_len = 400;
  std::size_t min_count = 2;
  std::size_t bpe_merges = 400;

  // [train]
  std::size_t batch_size = 32;
  double learning_rate = 0.001;
  double finetune_learning_rate = 0.0001;
  double decay = 0.9998;
  double clip_norm = 0.0;
  std::size_t expert_epochs = 30;
  std::size_t imitator_epochs = 4;
  std::size_t finetune_epochs = 30;
  bool random_imn = false;

  // [run]
  std::uint64_t seed = 1;
  std::size_t seeds = 5;
  std::size_t jobs = 1;

  // [output]
  bool record_timing = false;
  bool epoch_checkpoints = false;

  // [synth]
  SyntheticSpec synth;

  static TrainConfig desk();
  static TrainConfig paper();

  /// Seeds seed, seed + 1, ..., seed + seeds - 1.
  std::vector<std::uint64_t> seed_list() const;
  std::vector<std::size_t> windows() const;  // 1..num_imitators

  /// Throws ConfigError on non-positive dims or out-of-range rates.
  void validate() const;

  /// Every key, one `key = value` per line under `[section]` headers.
  std::string to_text() const;
};

/// Sets one dotted key (`train.batch_size`) or `profile`. Unknown keys and
/// unparsable values throw ConfigError.
void apply_setting(TrainConfig& config, std::string_view key, std::string_view value);

/// Parses `key = value` lines with optional `[section]` headers and `#`
/// comments. A `profile` line selects the base defaults before any other
/// key is applied.
TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);

/// Applies `key=value` overrides in order.
void apply_overrides(TrainConfig& config, const std::vector<std::string>& overrides);

}  // namespace mein
