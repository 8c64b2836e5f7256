#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "modest/cli.hpp"
#include "modest/embedding_store.hpp"

using modest::cli::run;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "modest_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int gen_small(const fs::path& out, const std::string& seed = "5") {
  return run({"gen-synth", "--out", out.string(), "--n-pairs", "80", "--latent-dim", "8",
              "--dim-x", "16", "--dim-y", "12", "--noise", "0.02", "--partial-rate", "0.2",
              "--mismatch-rate", "0.1", "--seed", seed});
}

}  // namespace

TEST_CASE("gen-synth writes the dataset files") {
  const auto out = fresh_dir("gen");
  CHECK(gen_small(out) == 0);
  CHECK(fs::exists(out / "x.maln"));
  CHECK(fs::exists(out / "y.maln"));
  CHECK(fs::exists(out / "quality.txt"));
  CHECK(fs::exists(out / "synth_spec.json"));
  const auto m = modest::load_embeddings(out / "x.maln");
  CHECK(m.count == 80);
  CHECK(m.dim == 16);
}

TEST_CASE("inspect prints headers and succeeds") {
  const auto out = fresh_dir("inspect");
  REQUIRE(gen_small(out) == 0);
  CHECK(run({"inspect", (out / "x.maln").string()}) == 0);
  CHECK(run({"inspect", (out / "missing.maln").string()}) == 1);
}

TEST_CASE("usage errors exit with 2") {
  CHECK(run({"frobnicate"}) == 2);
  CHECK(run({"train", "--no-such-flag"}) == 2);
  CHECK(run({}) == 2);
  CHECK(run({"gen-synth"}) == 2);  // missing required --out
}

TEST_CASE("runtime errors exit with 1") {
  const auto out = fresh_dir("rt");
  CHECK(run({"analyze", "--data", (out / "nope").string(), "--out", out.string()}) == 1);
}

TEST_CASE("analyze emits the histogram csv") {
  const auto data = fresh_dir("an_data");
  const auto out = fresh_dir("an_out");
  REQUIRE(gen_small(data) == 0);
  CHECK(run({"analyze", "--data", data.string(), "--out", out.string()}) == 0);
  const std::string csv = slurp(out / "histogram.csv");
  CHECK(csv.find("bin_low,bin_high,count") == 0);
}

TEST_CASE("train then eval end to end") {
  const auto data = fresh_dir("e2e_data");
  const auto run1 = fresh_dir("e2e_run");
  const auto evald = fresh_dir("e2e_eval");
  REQUIRE(gen_small(data) == 0);

  CHECK(run({"train", "--data", data.string(), "--out", run1.string(), "--batch-size", "40",
             "--epochs", "3", "--seed", "7", "--sigma", "0.01", "--alpha", "0.1"}) == 0);
  CHECK(fs::exists(run1 / "final.mack"));
  CHECK(fs::exists(run1 / "run_log.jsonl"));
  CHECK(fs::exists(run1 / "effective_config.json"));

  CHECK(run({"eval", "--ckpt", (run1 / "final.mack").string(), "--data", data.string(), "--out",
             evald.string(), "--k", "1,5,10"}) == 0);
  const std::string csv = slurp(evald / "report.csv");
  CHECK(csv.find("direction,K,recall") == 0);
  // six recall numbers: two directions x three cutoffs
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
  CHECK(csv.find("text_to_image,1,") != std::string::npos);
  CHECK(csv.find("image_to_text,10,") != std::string::npos);
}

TEST_CASE("a run is reproducible from its emitted config copy") {
  const auto data = fresh_dir("repro_data");
  const auto run1 = fresh_dir("repro_run1");
  const auto run2 = fresh_dir("repro_run2");
  REQUIRE(gen_small(data) == 0);

  REQUIRE(run({"train", "--data", data.string(), "--out", run1.string(), "--batch-size", "40",
               "--epochs", "3", "--seed", "21"}) == 0);
  REQUIRE(run({"train", "--data", data.string(), "--out", run2.string(), "--config",
               (run1 / "effective_config.json").string()}) == 0);

  CHECK(slurp(run1 / "final.mack") == slurp(run2 / "final.mack"));
  CHECK(slurp(run1 / "run_log.jsonl") == slurp(run2 / "run_log.jsonl"));
  CHECK(slurp(run1 / "effective_config.json") == slurp(run2 / "effective_config.json"));
}

TEST_CASE("grid-search writes the sigma x alpha table") {
  const auto data = fresh_dir("grid_data");
  const auto out = fresh_dir("grid_out");
  REQUIRE(gen_small(data) == 0);
  CHECK(run({"grid-search", "--data", data.string(), "--out", out.string(), "--batch-size",
             "30", "--epochs", "2", "--sigma-grid", "0,0.01", "--alpha-grid", "0.1",
             "--holdout", "20", "--seed", "3"}) == 0);
  const std::string csv = slurp(out / "grid.csv");
  CHECK(csv.find("sigma,alpha,r1_text_to_image,r1_image_to_text,mean_r1") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 cells
}
