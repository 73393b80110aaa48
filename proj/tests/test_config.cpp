#include <doctest.h>

#include "mein/config.hpp"

using namespace mein;

TEST_SUITE("config") {
  TEST_CASE("sections, comments and values") {
    const auto c = parse_config(R"(
# desk run
[model]
hidden_dim = 48   # smaller
dropout = 0.25
[train]
batch_size = 16
random_imn = true
[data]
path = /tmp/corpus
[synth]
noise = 0.2
)");
    CHECK(c.hidden_dim == 48);
    CHECK(c.dropout == 0.25);
    CHECK(c.batch_size == 16);
    CHECK(c.random_imn);
    CHECK(c.data_path == "/tmp/corpus");
    CHECK(c.synth.noise == 0.2);
    CHECK(c.embed_dim == 32);
  }

  TEST_CASE("profile applies before other keys") {
    const auto c = parse_config("profile = paper\n[model]\nhidden_dim = 7\n");
    CHECK(c.profile == "paper");
    CHECK(c.hidden_dim == 7);
    CHECK(c.embed_dim == 256);
    CHECK(TrainConfig::paper().hidden_dim == 1024);
    CHECK(TrainConfig::paper().bpe_merges == 30000);
  }

  TEST_CASE("unknown keys and bad values are errors") {
    CHECK_THROWS_AS(parse_config("[model]\nhiden_dim = 3\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[model]\nhidden_dim = many\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("profile = huge\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("just text\n"), ConfigError);
  }

  TEST_CASE("overrides and validation") {
    auto c = TrainConfig::desk();
    apply_overrides(c, {"train.learning_rate=0.01", "run.seeds=3"});
    CHECK(c.learning_rate == 0.01);
    CHECK(c.seed_list() == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(c.windows() == std::vector<std::size_t>{1, 2, 3, 4});
    CHECK_THROWS_AS(apply_overrides(c, {"run.seeds"}), ConfigError);
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = TrainConfig::desk();
    c.hidden_dim = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }

  TEST_CASE("text form parses back to the same config") {
    auto c = TrainConfig::desk();
    c.learning_rate = 0.00123;
    c.synth.distractor_rate = 0.3;
    c.data_path = "some/dir";
    c.record_timing = true;
    const auto back = parse_config(c.to_text());
    CHECK(back.to_text() == c.to_text());
    CHECK(back.learning_rate == 0.00123);
  }
}
