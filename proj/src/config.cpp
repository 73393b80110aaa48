#include "mein/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace mein {

namespace {

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

template <typename V>
V parse_number(std::string_view key, std::string_view text) {
  V v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigError("config: bad value '" + std::string(text) + "' for " + std::string(key));
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError("config: bad boolean '" + std::string(text) + "' for " + std::string(key));
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

struct Field {
  const char* key;
  std::function<void(TrainConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename M>
Field field(const char* key, M TrainConfig::*member) {
  Field f{key, {}, {}};
  f.set = [member](TrainConfig& c, std::string_view k, std::string_view v) {
    if constexpr (std::is_same_v<M, bool>) {
      c.*member = parse_bool(k, v);
    } else if constexpr (std::is_same_v<M, std::string>) {
      c.*member = std::string(v);
    } else {
      c.*member = parse_number<M>(k, v);
    }
  };
  f.get = [member](const TrainConfig& c) -> std::string {
    if constexpr (std::is_same_v<M, bool>) {
      return c.*member ? "true" : "false";
    } else if constexpr (std::is_same_v<M, std::string>) {
      return c.*member;
    } else if constexpr (std::is_floating_point_v<M>) {
      return format_double(c.*member);
    } else {
      return std::to_string(c.*member);
    }
  };
  return f;
}

template <typename M>
Field synth_field(const char* key, M SyntheticSpec::*member) {
  Field f{key, {}, {}};
  f.set = [member](TrainConfig& c, std::string_view k, std::string_view v) {
    c.synth.*member = parse_number<M>(k, v);
  };
  f.get = [member](const TrainConfig& c) -> std::string {
    if constexpr (std::is_floating_point_v<M>) {
      return format_double(c.synth.*member);
    } else {
      return std::to_string(c.synth.*member);
    }
  };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      field("model.embed_dim", &TrainConfig::embed_dim),
      field("model.hidden_dim", &TrainConfig::hidden_dim),
      field("model.mlp_dim", &TrainConfig::mlp_dim),
      field("model.imitator_embed_dim", &TrainConfig::imitator_embed_dim),
      field("model.kernel_dim", &TrainConfig::kernel_dim),
      field("model.num_imitators", &TrainConfig::num_imitators),
      field("model.dropout", &TrainConfig::dropout),
      field("data.path", &TrainConfig::data_path),
      field("data.max_len", &TrainConfig::max_len),
      field("data.min_count", &TrainConfig::min_count),
      field("data.bpe_merges", &TrainConfig::bpe_merges),
      field("train.batch_size", &TrainConfig::batch_size),
      field("train.learning_rate", &TrainConfig::learning_rate),
      field("train.finetune_learning_rate", &TrainConfig::finetune_learning_rate),
      field("train.decay", &TrainConfig::decay),
      field("train.clip_norm", &TrainConfig::clip_norm),
      field("train.expert_epochs", &TrainConfig::expert_epochs),
      field("train.imitator_epochs", &TrainConfig::imitator_epochs),
      field("train.finetune_epochs", &TrainConfig::finetune_epochs),
      field("train.random_imn", &TrainConfig::random_imn),
      field("run.seed", &TrainConfig::seed),
      field("run.seeds", &TrainConfig::seeds),
      field("run.jobs", &TrainConfig::jobs),
      field("output.record_timing", &TrainConfig::record_timing),
      field("output.epoch_checkpoints", &TrainConfig::epoch_checkpoints),
      synth_field("synth.vocab_size", &SyntheticSpec::vocab_size),
      synth_field("synth.num_classes", &SyntheticSpec::num_classes),
      synth_field("synth.lexicon_size", &SyntheticSpec::lexicon_size),
      synth_field("synth.max_span", &SyntheticSpec::max_span),
      synth_field("synth.min_length", &SyntheticSpec::min_length),
      synth_field("synth.max_length", &SyntheticSpec::max_length),
      synth_field("synth.max_gap", &SyntheticSpec::max_gap),
      synth_field("synth.distractor_rate", &SyntheticSpec::distractor_rate),
      synth_field("synth.noise", &SyntheticSpec::noise),
      synth_field("synth.train", &SyntheticSpec::train),
      synth_field("synth.dev", &SyntheticSpec::dev),
      synth_field("synth.test", &SyntheticSpec::test),
      synth_field("synth.unlabeled", &SyntheticSpec::unlabeled),
      synth_field("synth.seed", &SyntheticSpec::seed),
  };
  return table;
}

TrainConfig profile_defaults(std::string_view name) {
  if (name == "desk") return TrainConfig::desk();
  if (name == "paper") return TrainConfig::paper();
  throw ConfigError("config: unknown profile '" + std::string(name) + "' (expected desk or paper)");
}

}  // namespace

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::paper() {
  TrainConfig c;
  c.profile = "paper";
  c.embed_dim = 256;
  c.hidden_dim = 1024;
  c.mlp_dim = 128;
  c.imitator_embed_dim = 512;
  c.kernel_dim = 512;
  c.num_imitators = 4;
  c.batch_size = 32;
  c.learning_rate = 0.001;
  c.finetune_learning_rate = 0.0001;
  c.decay = 0.9998;
  c.expert_epochs = 30;
  c.imitator_epochs = 30;
  c.finetune_epochs = 30;
  c.bpe_merges = 30000;
  return c;
}

std::vector<std::uint64_t> TrainConfig::seed_list() const {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < seeds; ++i) out.push_back(seed + i);
  return out;
}

std::vector<std::size_t> TrainConfig::windows() const {
  std::vector<std::size_t> out;
  for (std::size_t c = 1; c <= num_imitators; ++c) out.push_back(c);
  return out;
}

void TrainConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("config: ") + name + " must be positive");
  };
  positive(embed_dim, "model.embed_dim");
  positive(hidden_dim, "model.hidden_dim");
  positive(mlp_dim, "model.mlp_dim");
  positive(imitator_embed_dim, "model.imitator_embed_dim");
  positive(kernel_dim, "model.kernel_dim");
  positive(batch_size, "train.batch_size");
  positive(max_len, "data.max_len");
  positive(seeds, "run.seeds");
  positive(jobs, "run.jobs");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("config: model.dropout must lie in [0, 1)");
  if (!(learning_rate > 0.0) || !(finetune_learning_rate > 0.0)) {
    throw ConfigError("config: learning rates must be positive");
  }
  if (!(decay > 0.0 && decay <= 1.0)) throw ConfigError("config: train.decay must lie in (0, 1]");
  if (clip_norm < 0.0) throw ConfigError("config: train.clip_norm must be non-negative");
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  out << "profile = " << profile << '\n';
  std::string section;
  for (const auto& f : fields()) {
    const std::string_view key = f.key;
    const auto dot = key.find('.');
    const auto sec = std::string(key.substr(0, dot));
    if (sec != section) {
      out << "\n[" << sec << "]\n";
      section = sec;
    }
    out << key.substr(dot + 1) << " = " << f.get(*this) << '\n';
  }
  return out.str();
}

void apply_setting(TrainConfig& config, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  if (key == "profile") {
    auto fresh = profile_defaults(value);
    config = fresh;
    return;
  }
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(config, key, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

TrainConfig parse_config(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string section;
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  std::string profile = "desk";
  while (std::getline(in, raw)) {
    ++line_no;
    std::string_view line = raw;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section header");
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    auto key = std::string(trim(line.substr(0, eq)));
    const auto value = std::string(trim(line.substr(eq + 1)));
    if (section.empty() && key == "profile") {
      profile = value;
      continue;
    }
    if (!section.empty()) key = section + "." + key;
    entries.emplace_back(std::move(key), value);
  }
  TrainConfig config = profile_defaults(profile);
  for (const auto& [k, v] : entries) apply_setting(config, k, v);
  return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void apply_overrides(TrainConfig& config, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + o + "': expected key=value");
    apply_setting(config, std::string_view(o).substr(0, eq), std::string_view(o).substr(eq + 1));
  }
}

}  // namespace mein
