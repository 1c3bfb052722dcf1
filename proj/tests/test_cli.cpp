#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "mmdt_test_cli";

struct Run {
  int code = -1;
  std::string err;
};

Run run(const std::string& args) {
  const auto err_path = kWork / "stderr.txt";
  const std::string cmd = std::string(MMDT_CLI_PATH) + " " + args + " > " + (kWork / "stdout.txt").string() +
                          " 2> " + err_path.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err_path);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

std::string path(const std::string& rel) { return (kWork / rel).string(); }

void write(const std::string& rel, const std::string& text) { std::ofstream(kWork / rel) << text; }

}  // namespace

TEST_CASE("usage errors exit with 1") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  CHECK(run("").code == 1);
  CHECK(run("frobnicate").code == 1);
  CHECK(run("synth-data --out " + path("x") + " --bogus").code == 1);

  const auto no_model = run("eval --data " + kWork.string() + " --out " + path("e") + " --traces " + path("stdout.txt"));
  CHECK(no_model.code == 1);
  CHECK(no_model.err.find("--model") != std::string::npos);
  CHECK(no_model.err.find("Usage") != std::string::npos);

  write("bad.cfg", "train.learning_rat = 1\n");
  CHECK(run("synth-data --config " + path("bad.cfg") + " --out " + path("x")).code == 1);
}

TEST_CASE("synth-data is deterministic") {
  REQUIRE(run("synth-data --out " + path("d1") + " --n 2 --side 300 --seed 7").code == 0);
  REQUIRE(run("synth-data --out " + path("d2") + " --n 2 --side 300 --seed 7").code == 0);
  REQUIRE(run("synth-data --out " + path("d3") + " --n 2 --side 300 --seed 8").code == 0);
  std::size_t files = 0;
  bool differs = false;
  for (const auto& e : fs::recursive_directory_iterator(kWork / "d1")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), kWork / "d1");
    CHECK(slurp(e.path()) == slurp(kWork / "d2" / rel));
    differs |= slurp(e.path()) != slurp(kWork / "d3" / rel);
  }
  CHECK(files == 5);
  CHECK(differs);
}

TEST_CASE("end-to-end workflow on a tiny configuration") {
  REQUIRE(run("synth-data --out " + path("data") + " --n 2 --side 300 --seed 3").code == 0);
  write("tiny.cfg",
        "train.total_iterations = 10\n"
        "train.checkpoint_every = 10\n"
        "disentangler.base = 1\n"
        "synthesizer.base = 1\n"
        "synthesizer.res_blocks = 1\n"
        "discriminator.base = 1\n"
        "backbone.token_dim = 24\n"
        "backbone.depth = 1\n"
        "backbone.heads = 2\n"
        "backbone.ama_hidden = 8\n"
        "finetune.max_epochs = 1\n"
        "finetune.batch_size = 4\n");
  const std::string cfg = " --config " + path("tiny.cfg");

  REQUIRE(run("train-disentangle" + cfg + " --data " + path("data") + " --out " + path("dis")).code == 0);
  CHECK(count_lines(kWork / "dis" / "losses.csv") == 11);
  CHECK(fs::exists(kWork / "dis" / "checkpoint_0000010.ckpt"));
  CHECK(fs::exists(kWork / "dis" / "final.ckpt"));
  const std::string dis = path("dis/final.ckpt");

  REQUIRE(run("export-traces" + cfg + " --model " + dis + " --data " + path("data") + " --out " + path("tr")).code == 0);
  CHECK(fs::exists(kWork / "tr" / "traces.ckpt"));

  REQUIRE(run("train-mmdt" + cfg + " --data " + path("data") + " --traces " + path("tr/traces.ckpt") + " --out " +
              path("m"))
              .code == 0);
  CHECK(fs::exists(kWork / "m" / "model.ckpt"));
  CHECK(count_lines(kWork / "m" / "finetune.csv") == 2);

  REQUIRE(run("eval" + cfg + " --model " + path("m/model.ckpt") + " --data " + path("data") + " --disentangler " + dis +
              " --out " + path("ev"))
              .code == 0);
  CHECK(count_lines(kWork / "ev" / "report.tsv") == 6);
  CHECK(slurp(kWork / "ev" / "report.tsv").find("# summary\tprotocol=synthetic -> synthetic") != std::string::npos);

  REQUIRE(run("viz-traces --model " + dis + " --out " + path("viz") + " " + path("data/genuine/00000.png")).code == 0);
  CHECK(fs::exists(kWork / "viz" / "00000_0.png"));
  CHECK(fs::exists(kWork / "viz" / "00000_3.png"));

  // Both trace sources at once, and a classifier checkpoint passed as a disentangler.
  CHECK(run("eval --model " + path("m/model.ckpt") + " --data " + path("data") + " --disentangler " + dis +
            " --traces " + path("tr/traces.ckpt") + " --out " + path("ev2"))
            .code == 1);
  CHECK(run("export-traces --model " + path("m/model.ckpt") + " --data " + path("data") + " --out " + path("tr2"))
            .code == 2);
}
