#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "rankcount/checkpoint.hpp"
#include "rankcount/image.hpp"
#include "rankcount/manifest.hpp"

using namespace rankcount;
namespace fs = std::filesystem;

namespace {

const char* tool_path() {
#ifdef RANKCOUNT_TOOL_PATH
  return RANKCOUNT_TOOL_PATH;
#else
  return "rankcount";
#endif
}

struct RunResult {
  int exit_code = -1;
  std::string output;
};

RunResult run_tool(const std::string& args) {
  const fs::path out_file = fs::temp_directory_path() / "rankcount_cli_out.txt";
  const std::string cmd =
      std::string(tool_path()) + " " + args + " > " + out_file.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out_file);
  result.output.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return result;
}

}  // namespace

TEST_CASE("cli exit codes: help 0, usage errors 1, runtime errors 2") {
  CHECK(run_tool("--help").exit_code == 0);

  auto missing = run_tool("synth --scenes 3");  // --out missing
  CHECK(missing.exit_code == 1);
  CHECK(missing.output.find("--out") != std::string::npos);

  auto unknown = run_tool("synth --scenes 3 --out /tmp/x --no-such-flag");
  CHECK(unknown.exit_code == 1);

  auto runtime = run_tool("eval --checkpoint /nonexistent.ckpt --dataset /nonexistent --out /tmp/r.csv");
  CHECK(runtime.exit_code == 2);
  CHECK(runtime.output.find("error") != std::string::npos);
}

TEST_CASE("cli pipeline: synth, rankgen, train, eval, report") {
  const fs::path dir = fs::temp_directory_path() / "rankcount_cli_pipeline";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string d = dir.string();

  REQUIRE(run_tool("synth --scenes 6 --min-count 5 --max-count 40 --size 192x192 --seed 3 --out " +
                   d + "/labeled").exit_code == 0);
  REQUIRE(run_tool("synth --scenes 8 --min-count 5 --max-count 40 --size 192x192 --seed 4 --out " +
                   d + "/unlabeled").exit_code == 0);
  REQUIRE(run_tool("rankgen --corpus " + d + "/unlabeled --k 5 --s 0.75 --r 8 --seed 5 --out " +
                   d + "/chains.jsonl").exit_code == 0);

  auto train = run_tool("train --regime multitask --preset toy --labeled " + d +
                        "/labeled --chains " + d + "/chains.jsonl --unlabeled " + d +
                        "/unlabeled --iterations 8 --seed 6 --lambda 10 --out " + d + "/run");
  REQUIRE(train.exit_code == 0);
  CHECK(fs::exists(dir / "run/final.ckpt"));
  CHECK(fs::exists(dir / "run/train_log.csv"));
  CHECK(fs::exists(dir / "run/manifest.json"));
  CHECK(fs::exists(dir / "run/config.cfg"));

  auto eval = run_tool("eval --checkpoint " + d + "/run/final.ckpt --dataset " + d +
                       "/labeled --label multitask --out " + d + "/report.csv");
  REQUIRE(eval.exit_code == 0);
  CHECK(eval.output.find("MAE") != std::string::npos);

  auto report = run_tool("report --reports " + d + "/report.csv --out " + d +
                         "/report_dir --dataset " + d + "/labeled --checkpoint " + d +
                         "/run/final.ckpt --triptychs 2");
  REQUIRE(report.exit_code == 0);
  CHECK(fs::exists(dir / "report_dir/table.csv"));
  CHECK(fs::exists(dir / "report_dir/table.md"));

  // Triptych panels share identical dimensions.
  for (const std::string id : {"scene_0000", "scene_0001"}) {
    int w0, h0, w1, h1, w2, h2;
    read_pgm_size(dir / ("report_dir/" + id + "_image.pgm"), w0, h0);
    read_pgm_size(dir / ("report_dir/" + id + "_gt.pgm"), w1, h1);
    read_pgm_size(dir / ("report_dir/" + id + "_pred.pgm"), w2, h2);
    CHECK(w0 == w1);
    CHECK(w1 == w2);
    CHECK(h0 == h1);
    CHECK(h1 == h2);
  }

  // A single-report table has one data row, sorted output starts with it.
  std::ifstream table(dir / "report_dir/table.csv");
  std::string header, row;
  std::getline(table, header);
  std::getline(table, row);
  CHECK(header == "label,mae,mse,images");
  CHECK(row.rfind("multitask,", 0) == 0);

  fs::remove_all(dir);
}

TEST_CASE("cli reruns reproduce byte-identical artifacts from the manifest") {
  const fs::path dir = fs::temp_directory_path() / "rankcount_cli_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string d = dir.string();

  REQUIRE(run_tool("synth --scenes 5 --min-count 5 --max-count 30 --size 192x192 --seed 9 --out " +
                   d + "/corpus").exit_code == 0);
  REQUIRE(run_tool("rankgen --corpus " + d + "/corpus --seed 10 --out " + d +
                   "/chains.jsonl").exit_code == 0);

  const std::string train_flags = "train --regime multitask --preset toy --labeled " + d +
                                  "/corpus --chains " + d + "/chains.jsonl --unlabeled " + d +
                                  "/corpus --iterations 6 --seed 11 --lambda 5 --out ";
  REQUIRE(run_tool(train_flags + d + "/run_a").exit_code == 0);

  // Re-run with the argv recorded in the manifest, swapping the output dir.
  RunManifest manifest = RunManifest::read(dir / "run_a/manifest.json");
  std::string replay;
  for (std::size_t i = 0; i < manifest.argv.size(); ++i) {
    std::string arg = manifest.argv[i];
    if (arg == d + "/run_a") arg = d + "/run_b";
    replay += (i ? " " : "") + arg;
  }
  REQUIRE(run_tool(replay).exit_code == 0);

  CHECK(hash_file(dir / "run_a/final.ckpt") == hash_file(dir / "run_b/final.ckpt"));
  CHECK(hash_file(dir / "run_a/train_log.csv") == hash_file(dir / "run_b/train_log.csv"));
  fs::remove_all(dir);
}
