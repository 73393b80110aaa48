#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mein/expert.hpp"
#include "mein/layers.hpp"
#include "mein/ops.hpp"

using namespace mein;

namespace {

void fill(Tensor& t, float v) { std::fill(t.mutable_values().begin(), t.mutable_values().end(), v); }

void fill_random(Tensor& t, std::mt19937_64& rng, float scale) {
  std::uniform_real_distribution<float> d(-scale, scale);
  for (auto& v : t.mutable_values()) v = d(rng);
}

ExpertParams small_expert(std::size_t classes, std::uint64_t seed = 3) {
  ExpertConfig c;
  c.vocab_size = 5;
  c.embed_dim = 2;
  c.hidden_dim = 3;
  c.mlp_dim = 2;
  c.num_classes = classes;
  return ExpertParams::init(c, seed);
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Scalar-loop forward over one sequence, written without the tensor ops.
std::vector<double> reference_logits(const ExpertParams& p, const std::vector<std::int32_t>& seq) {
  const auto D = p.config.embed_dim, H = p.config.hidden_dim, M = p.config.mlp_dim, K = p.config.num_classes;
  std::vector<double> h(H, 0.0), c(H, 0.0);
  for (auto id : seq) {
    std::vector<double> in(D + H);
    for (std::size_t d = 0; d < D; ++d) in[d] = p.embedding.at(id, d);
    for (std::size_t j = 0; j < H; ++j) in[D + j] = h[j];
    std::vector<double> g(4 * H);
    for (std::size_t col = 0; col < 4 * H; ++col) {
      double acc = p.lstm_bias[col];
      for (std::size_t r = 0; r < D + H; ++r) acc += in[r] * p.lstm_weight.at(r, col);
      g[col] = acc;
    }
    for (std::size_t j = 0; j < H; ++j) {
      const double i = sig(g[j]), f = sig(g[H + j]), cand = std::tanh(g[2 * H + j]), o = sig(g[3 * H + j]);
      c[j] = f * c[j] + i * cand;
      h[j] = o * std::tanh(c[j]);
    }
  }
  std::vector<double> s(M);
  for (std::size_t m = 0; m < M; ++m) {
    double acc = p.mlp_bias[m];
    for (std::size_t j = 0; j < H; ++j) acc += h[j] * p.mlp_weight.at(j, m);
    s[m] = std::max(0.0, acc);
  }
  std::vector<double> z(K);
  for (std::size_t k = 0; k < K; ++k) {
    double acc = p.class_bias[k];
    for (std::size_t m = 0; m < M; ++m) acc += s[m] * p.class_weight.at(m, k);
    z[k] = acc;
  }
  return z;
}

}  // namespace

TEST_SUITE("expert") {
  TEST_CASE("zero weights keep the state at zero") {
    const auto x = Tensor::constant({1, 2}, {0.7f, -0.3f});
    const auto zero_state = Tensor::zeros({1, 3});
    const auto s = layers::lstm_cell(x, zero_state, zero_state, Tensor::zeros({5, 12}), Tensor::zeros({1, 12}));
    for (float v : s.h.values()) CHECK(v == 0.0f);
    for (float v : s.c.values()) CHECK(v == 0.0f);
  }

  TEST_CASE("open forget gate and closed input gate keep c") {
    const auto x = Tensor::constant({1, 1}, {1.0f});
    std::vector<float> bias(4, 0.0f);
    bias[0] = -60.0f;  // input gate
    bias[1] = 60.0f;   // forget gate
    bias[2] = 1.0f;
    const auto s = layers::lstm_cell(x, Tensor::zeros({1, 1}), Tensor::zeros({1, 1}), Tensor::zeros({2, 4}),
                                     Tensor::constant({1, 4}, bias));
    CHECK(s.c[0] == doctest::Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("constant head ignores the input") {
    auto p = small_expert(3);
    fill(p.class_weight, 0.0f);
    p.class_bias.mutable_values()[0] = 0.5f;
    p.class_bias.mutable_values()[1] = -1.0f;
    p.class_bias.mutable_values()[2] = 2.0f;
    const std::vector<std::int32_t> a{1, 2, 3}, b{4};
    const auto z = expert_forward({a, b}, p).logits;
    for (std::size_t r = 0; r < 2; ++r) {
      CHECK(z.at(r, 0) == 0.5f);
      CHECK(z.at(r, 1) == -1.0f);
      CHECK(z.at(r, 2) == 2.0f);
    }
  }

  TEST_CASE("length-one sequence is one step from zero") {
    const auto p = small_expert(2);
    const std::vector<std::int32_t> seq{3};
    const auto out = expert_forward({seq}, p);
    const auto x = embedding(p.embedding, std::span<const std::int32_t>(seq));
    const auto s = lstm_step(x, {Tensor::zeros({1, 3}), Tensor::zeros({1, 3})}, p);
    REQUIRE(out.hidden.size() == 1);
    for (std::size_t j = 0; j < 3; ++j) CHECK(out.hidden[0][j] == s.h[j]);
  }

  TEST_CASE("forward matches a scalar recomputation") {
    std::mt19937_64 rng(5);
    auto p = small_expert(2);
    for (auto* t : {&p.embedding, &p.lstm_weight, &p.lstm_bias, &p.mlp_weight, &p.mlp_bias, &p.class_weight,
                    &p.class_bias}) {
      fill_random(*t, rng, 0.8f);
    }
    const std::vector<std::int32_t> seq{2, 4};
    const auto z = expert_forward({seq}, p).logits;
    const auto ref = reference_logits(p, seq);
    CHECK(z[0] == doctest::Approx(ref[0]).epsilon(1e-5));
    CHECK(z[1] == doctest::Approx(ref[1]).epsilon(1e-5));
  }

  TEST_CASE("shorter sequences keep their own final state") {
    const auto p = small_expert(2);
    const std::vector<std::int32_t> longer{1, 2, 3, 4}, shorter{2, 1};
    const auto both = expert_forward({longer, shorter}, p).logits;
    const auto alone = expert_forward({shorter}, p).logits;
    CHECK(both.at(1, 0) == doctest::Approx(alone.at(0, 0)).epsilon(1e-6));
    CHECK(both.at(1, 1) == doctest::Approx(alone.at(0, 1)).epsilon(1e-6));
  }

  TEST_CASE("expert distribution") {
    const auto p = expert_prob(Tensor::constant({2, 2}, {0.0f, 0.0f, std::log(3.0f), 0.0f}));
    CHECK(p.at(0, 0) == doctest::Approx(0.5));
    CHECK(p.at(1, 0) == doctest::Approx(0.75));
    CHECK(p.at(1, 1) == doctest::Approx(0.25));
    const auto shifted = expert_prob(Tensor::constant({1, 3}, {1.0f, 2.0f, -3.0f}));
    const auto base = expert_prob(Tensor::constant({1, 3}, {11.0f, 12.0f, 7.0f}));
    for (std::size_t k = 0; k < 3; ++k) CHECK(std::fabs(shifted[k] - base[k]) < 1e-6f);
  }

  TEST_CASE("supervised loss of a uniform model") {
    for (std::size_t classes : {2u, 55u}) {
      auto p = small_expert(classes);
      fill(p.class_weight, 0.0f);
      fill(p.class_bias, 0.0f);
      const std::vector<std::int32_t> seq{1, 2};
      const std::vector<std::int32_t> labels{1};
      CHECK(supervised_loss({seq}, labels, p).item() ==
            doctest::Approx(std::log(static_cast<double>(classes))).epsilon(1e-6));
    }
  }

  TEST_CASE("confident correct model has near-zero loss") {
    auto p = small_expert(2);
    fill(p.class_weight, 0.0f);
    p.class_bias.mutable_values()[0] = 40.0f;
    const std::vector<std::int32_t> seq{1};
    const std::vector<std::int32_t> labels{0};
    CHECK(supervised_loss({seq}, labels, p).item() < 1e-6f);
  }

  TEST_CASE("bad labels and empty sequences are rejected") {
    const auto p = small_expert(2);
    const std::vector<std::int32_t> seq{1}, empty;
    const std::vector<std::int32_t> bad{2};
    CHECK_THROWS(supervised_loss({seq}, bad, p));
    CHECK_THROWS_AS(expert_forward({empty}, p), std::invalid_argument);
  }

  TEST_CASE("dropout only changes training forwards") {
    const auto p = small_expert(2);
    const std::vector<std::int32_t> seq{1, 2, 3};
    const auto clean = expert_forward({seq}, p).logits;
    const auto again = expert_forward({seq}, p).logits;
    CHECK(clean[0] == again[0]);
    Rng rng(1);
    const auto dropped = expert_forward({seq}, p, &rng).logits;
    CHECK(dropped[0] != clean[0]);
  }
}
