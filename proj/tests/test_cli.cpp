#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "mein/checkpoint.hpp"
#include "mein/report.hpp"

using namespace mein;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string output;
};

const fs::path& work_dir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "mein_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result run(const std::string& args) {
  const auto log = work_dir() / "last_output.txt";
  const std::string cmd = std::string("\"") + MEIN_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::ostringstream s;
  s << in.rdbuf();
  r.output = s.str();
  return r;
}

fs::path small_config() {
  const auto path = work_dir() / "small.cfg";
  std::ofstream out(path);
  out << "[model]\nembed_dim = 8\nhidden_dim = 8\nmlp_dim = 4\nimitator_embed_dim = 8\nkernel_dim = 8\n"
         "num_imitators = 2\n"
         "[train]\nexpert_epochs = 2\nimitator_epochs = 1\nfinetune_epochs = 2\n"
         "[synth]\ntrain = 40\ndev = 20\ntest = 20\nunlabeled = 60\n";
  return path;
}

std::string common(const fs::path& out) {
  return "--config \"" + small_config().string() + "\" --out \"" + out.string() + "\" --quiet";
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("stages run in order and later stages need earlier ones") {
    const auto out = work_dir() / "staged";
    auto r = run("train finetune " + common(out));
    CHECK(r.code != 0);
    CHECK(r.output.find("error") != std::string::npos);

    r = run("train expert " + common(out));
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(out / "expert.ckpt"));
    CHECK(fs::exists(out / "words.vocab"));

    r = run("train finetune --out \"" + out.string() + "\" --quiet");
    CHECK(r.code != 0);
    CHECK(r.output.find("imitators") != std::string::npos);

    r = run("train imitators --out \"" + out.string() + "\" --quiet");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    r = run("train finetune --out \"" + out.string() + "\" --quiet");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(out / "mixture.ckpt"));
    r = run("train finetune --random-imn --out \"" + out.string() + "\" --quiet");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(fs::exists(out / "mixture-random.ckpt"));
    CHECK(load_checkpoint(out / "mixture.ckpt").stage == StageTag::kMixture);

    r = run("eval --checkpoint \"" + (out / "mixture.ckpt").string() + "\" --split test");
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(r.output.find("test error rate: ") != std::string::npos);
    r = run("eval --checkpoint \"" + (out / "mixture-random.ckpt").string() + "\" --split dev");
    CHECK(r.code == 0);
    r = run("eval --checkpoint \"" + (out / "imitators.ckpt").string() + "\" --split test");
    CHECK(r.code != 0);
    r = run("eval --checkpoint \"" + (out / "expert.ckpt").string() + "\" --split nowhere");
    CHECK(r.code != 0);
    const auto rows = read_csv(out / "eval.csv");
    CHECK(rows.size() == 3);  // header + two evaluations

    const auto train_rows = read_csv(out / "train.csv");
    CHECK(train_rows.size() > 4);
  }

  TEST_CASE("gate-disabled mixture checkpoint evaluates like the expert") {
    const auto out = work_dir() / "staged";
    REQUIRE(fs::exists(out / "mixture.ckpt"));
    const auto expert = load_checkpoint(out / "expert.ckpt");
    const auto imitators = load_checkpoint(out / "imitators.ckpt");
    ParamList all = expert.tensors;
    all.insert(all.end(), imitators.tensors.begin(), imitators.tensors.end());
    all.push_back({"mixture.lambda", Tensor::constant({1, 2}, {-INFINITY, -INFINITY})});
    save_checkpoint(out / "disabled.ckpt", StageTag::kMixture, all, expert.config_text);
    const auto a = run("eval --checkpoint \"" + (out / "disabled.ckpt").string() + "\" --split test");
    const auto b = run("eval --checkpoint \"" + (out / "expert.ckpt").string() + "\" --split test");
    REQUIRE(a.code == 0);
    REQUIRE(b.code == 0);
    CHECK(a.output == b.output);
  }

  TEST_CASE("experiment commands write their tables") {
    const auto out = work_dir() / "experiments";
    auto r = run("experiment protocol --seeds 2 " + common(out));
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(r.output.find("+-") != std::string::npos);
    CHECK(fs::exists(out / "protocol.csv"));

    r = run("experiment sweep --seeds 1 --sizes 20,60 " + common(out));
    REQUIRE_MESSAGE(r.code == 0, r.output);
    CHECK(read_csv(out / "sweep.csv").size() == 3);
    CHECK(fs::exists(out / "sweep.svg"));

    r = run("experiment ablate --seeds 1 --subsets \"1;1,2\" " + common(out));
    REQUIRE_MESSAGE(r.code == 0, r.output);
    const auto ablate = read_csv(out / "ablate.csv");
    REQUIRE(ablate.size() == 3);
    CHECK(ablate[1][0] == "A");

    r = run("experiment bench --seconds 0.1 " + common(out));
    REQUIRE_MESSAGE(r.code == 0, r.output);
    const auto bench = read_csv(out / "bench.csv");
    REQUIRE(bench.size() == 4);  // header, expert, c=1, c=1,2
    CHECK(bench[1][3] == "1.00");

    r = run("experiment sweep --sizes 60,20 " + common(out));
    CHECK(r.code != 0);
  }

  TEST_CASE("bad invocations fail") {
    CHECK(run("frobnicate").code != 0);
    CHECK(run("train expert --set model.nope=1 --quiet").code != 0);
    CHECK(run("train expert --data /nonexistent/corpus --out \"" + (work_dir() / "x").string() + "\" --quiet").code != 0);
  }
}
