#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "semtok/checkpoint.hpp"
#include "semtok/experiments.hpp"

using namespace semtok;
namespace fs = std::filesystem;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "semtok_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(SEMTOK_CLI_PATH) + " " + args + " > " +
                          (work_dir() / "stdout.txt").string() + " 2> " +
                          (work_dir() / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Small enough that one epoch takes well under a second.
fs::path tiny_config(const std::string& penalty = "global") {
  const fs::path p = work_dir() / ("tiny_" + penalty + ".json");
  std::ofstream(p) << R"({"image_size": 16, "patch_size": 4, "dim": 8, "heads": 2, "mlp_ratio": 2,
    "encoder_layers": 2, "decoder_layers": 1, "penalty": ")"
                   << penalty << R"(", "epochs": 1, "batch_size": 8,
    "train_size": 24, "test_size": 6})";
  return p;
}

const fs::path& trained_model() {
  static const fs::path ckpt = [] {
    const fs::path out = work_dir() / "tiny.stkc";
    REQUIRE(run("train --quiet --config " + tiny_config().string() + " --out " + out.string()) == 0);
    return out;
  }();
  return ckpt;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run("") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("train --epochs notanumber") == 2);
  CHECK(run("train --penalty both") == 2);
  CHECK(run("sweep " + trained_model().string()) == 2);  // --budgets is required
  CHECK(run("sweep " + trained_model().string() + " --budgets 0.5:0.1:0.1") == 2);
  CHECK(run("sweep " + trained_model().string() + " --budgets 0.5 --drop-probs 1.5") == 2);
  CHECK(run("--help") == 0);
}

TEST_CASE("config errors exit with 2 and name the key") {
  const fs::path bad = work_dir() / "bad.json";
  std::ofstream(bad) << R"({"lambda": -2})";
  CHECK(run("train --quiet --config " + bad.string()) == 2);
  CHECK(slurp(work_dir() / "stderr.txt").find("/lambda") != std::string::npos);
}

TEST_CASE("I/O and format errors exit with 3") {
  CHECK(run("sweep " + (work_dir() / "missing.stkc").string() + " --budgets 0.5") == 3);
  const fs::path junk = work_dir() / "junk.stkc";
  std::ofstream(junk) << "not a checkpoint";
  CHECK(run("visualize " + junk.string()) == 3);
}

TEST_CASE("train writes a checkpoint and one CSV row per batch") {
  const fs::path ckpt = trained_model();
  CHECK(fs::exists(ckpt));
  const auto csv = lines(fs::path(ckpt).replace_extension(".csv"));
  REQUIRE(csv.size() >= 2);
  CHECK(csv[0].rfind("#", 0) == 0);
  // 24 images in batches of 8, one epoch; plus comment and header lines.
  CHECK(csv.size() == 2 + 3);
  const Model m = load_checkpoint(ckpt);
  CHECK(m.config().dim == 8);

  const fs::path local = work_dir() / "local.stkc";
  CHECK(run("train --quiet --config " + tiny_config("local").string() + " --lambda 2 --out " +
            local.string()) == 0);
  const Model l = load_checkpoint(local);
  CHECK(l.config().penalty == PenaltyKind::local);
  CHECK(l.config().lambda == 2.0);
  CHECK(l.decoder_selection().empty());

  // Same seed, same bytes.
  const fs::path again = work_dir() / "again.stkc";
  CHECK(run("train --quiet --config " + tiny_config().string() + " --out " + again.string()) == 0);
  CHECK(slurp(again) == slurp(ckpt));
}

TEST_CASE("sweep writes one row per cell") {
  const fs::path out = work_dir() / "sweep.csv";
  CHECK(run("sweep " + trained_model().string() + " --config " + tiny_config().string() +
            " --budgets 0.2:1.0:0.4 --snrs 0,10 --drop-probs 0.1 --seeds 1,2 --out " +
            out.string()) == 0);
  const auto csv = lines(out);
  REQUIRE(csv.size() == 2 + 3 * 3);
  CHECK(csv[0] == "# semtok-sweep v1");
  CHECK(csv[1].rfind("alpha,channel,snr_db", 0) == 0);
  CHECK(csv[2].rfind("0.2,awgn,0,", 0) == 0);

  CHECK(run("sweep " + trained_model().string() + " --config " + tiny_config().string() +
            " --budgets 0.5,1 --out " + out.string()) == 0);
  const auto ideal = lines(out);
  REQUIRE(ideal.size() == 2 + 2);
  CHECK(ideal[2].find(",ideal,") != std::string::npos);
}

TEST_CASE("visualize writes nested masks") {
  const fs::path dir = work_dir() / "masks";
  CHECK(run("visualize " + trained_model().string() + " --config " + tiny_config().string() +
            " --sample 2 --budgets 0.3,1.0 --out " + dir.string()) == 0);
  CHECK(fs::exists(dir / "source_s2.pgm"));
  const Pgm src = read_pgm(dir / "source_s2.pgm");
  CHECK(src.width == 16);
  const auto csv = lines(dir / "masks_s2.csv");
  // three selection layers, two budgets
  REQUIRE(csv.size() == 2 + 6);
  // One pixel per patch; each layer's mask is contained in the previous one.
  for (double a : {0.3, 1.0})
    for (std::size_t layer = 0; layer < 3; ++layer) {
      const Pgm p = read_pgm(dir / mask_file_name(2, layer, a));
      CHECK(p.width == 4);
      CHECK(p.height == 4);
    }
  std::string previous;
  for (std::size_t i = 2; i < csv.size(); ++i) {
    const std::string mask = csv[i].substr(csv[i].rfind(',') + 1);
    REQUIRE(mask.size() == 16);
    std::istringstream fields(csv[i]);
    std::string sample, layer;
    std::getline(fields, sample, ',');
    std::getline(fields, layer, ',');
    if (layer != "0")
      for (std::size_t j = 0; j < mask.size(); ++j) CHECK((mask[j] == '0' || previous[j] == '1'));
    previous = mask;
  }
  CHECK(run("visualize " + trained_model().string() + " --config " + tiny_config().string() +
            " --layers 7 --out " + dir.string()) == 2);
}

TEST_CASE("gen-data is deterministic") {
  const fs::path a = work_dir() / "data_a", b = work_dir() / "data_b";
  CHECK(run("gen-data --n 10 --test-n 4 --seed 3 --out " + a.string()) == 0);
  CHECK(run("gen-data --n 10 --test-n 4 --seed 3 --out " + b.string()) == 0);
  for (const char* f : {"train-images.idx3-ubyte", "train-labels.idx1-ubyte",
                        "test-images.idx3-ubyte", "test-labels.idx1-ubyte"}) {
    CHECK(fs::exists(a / f));
    CHECK(slurp(a / f) == slurp(b / f));
  }
  CHECK(fs::file_size(a / "train-labels.idx1-ubyte") == 8 + 10);
  CHECK(fs::file_size(a / "train-images.idx3-ubyte") == 16 + 10 * 32 * 32);
}

TEST_CASE("gradcheck command") {
  CHECK(run("gradcheck") == 0);
  CHECK(slurp(work_dir() / "stdout.txt").find("end_to_end.global") != std::string::npos);
  CHECK(run("gradcheck --inject-fault gelu") == 1);
  CHECK(run("gradcheck --inject-fault nosuchop") == 2);
}
