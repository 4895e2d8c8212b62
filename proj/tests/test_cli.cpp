#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <string>

#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "volcast/segtrace.hpp"
#include "volcast/trainer.hpp"
#include "volcast/volstore.hpp"

using namespace volcast;
using vtest::TempDir;

namespace {

// Runs the installed binary with stdout+stderr captured into log_file.
int run_cli(const std::string& args, const std::filesystem::path& log_file) {
  const std::string cmd =
      std::string(VOLCAST_BIN) + " " + args + " > " + log_file.string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream f(p);
  f << text;
  REQUIRE(static_cast<bool>(f));
}

// Tiny dataset geometry shared by the pipeline tests.
const char* kSynthJson = R"({
  "dims": [12, 10, 4, 60],
  "n_cells": 3,
  "radius_lo": 1.0,
  "radius_hi": 1.5,
  "seed": 5
})";

const char* kModelJson = R"({
  "context": 2,
  "horizon": 3,
  "features": 8,
  "superres_features": 4,
  "groups": 2,
  "stages": [],
  "blocks_low": 1,
  "blocks_other": 1,
  "superres_stages": [],
  "dropout_rate": 0.0,
  "embed_dim": 4,
  "head": "lead_time",
  "n_bins": 8,
  "input_downsample": [1, 1, 1]
})";

// dir_contents minus the timestamped manifest.
std::vector<std::pair<std::string, std::string>> contents_no_manifest(
    const std::filesystem::path& root) {
  auto all = vtest::dir_contents(root);
  std::erase_if(all, [](const auto& e) {
    return std::filesystem::path(e.first).filename() == "manifest.json";
  });
  return all;
}

std::int64_t count_lines(const std::string& s) {
  std::int64_t n = 0;
  for (char c : s)
    if (c == '\n') ++n;
  return n;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage and config errors exit with code 2") {
  TempDir td("cli_usage");
  CHECK(run_cli("", td / "log0") == 2);                      // missing subcommand
  CHECK(run_cli("frobnicate", td / "log1") == 2);            // unknown subcommand
  CHECK(run_cli("synth-gen", td / "log2") == 2);             // missing required --out
  CHECK(run_cli("synth-gen --out " + (td / "x").string() + " --bogus-flag", td / "log3") == 2);
  // config file errors map to the same code
  CHECK(run_cli("rf-report --model-config /nonexistent/model.json", td / "log4") == 2);
  write_text(td / "synth.json", kSynthJson);
  CHECK(run_cli("synth-gen --config " + (td / "synth.json").string() + " --out " +
                    (td / "y").string() + " --variants fancy",
                td / "log5") == 2);
}

TEST_CASE("data errors exit with code 3") {
  TempDir td("cli_data");
  write_text(td / "model.json", kModelJson);
  CHECK(run_cli("eval --checkpoint /nonexistent.ckpt --data /nonexistent --out " +
                    (td / "rep").string(),
                td / "log0") == 3);
  CHECK(run_cli("train --data /nonexistent_ds --model-config " + (td / "model.json").string() +
                    " --out " + (td / "run").string(),
                td / "log1") == 3);
  CHECK(run_cli("preprocess --in /nonexistent_vol --out " + (td / "pp").string(), td / "log2") ==
        3);
}

TEST_CASE("synth-gen is deterministic and refuses to clobber without --force") {
  TempDir td("cli_synth");
  write_text(td / "synth.json", kSynthJson);
  const std::string base = "synth-gen --config " + (td / "synth.json").string() +
                           " --variants full,rendered --out ";

  CHECK(run_cli(base + (td / "a").string(), td / "log_a") == 0);
  CHECK(std::filesystem::exists(td / "a" / "manifest.json"));
  CHECK(std::filesystem::exists(td / "a" / "movie_full" / "meta.json"));
  CHECK(std::filesystem::exists(td / "a" / "movie_rendered" / "meta.json"));
  CHECK(std::filesystem::exists(td / "a" / "mask" / "meta.json"));
  CHECK(std::filesystem::exists(td / "a" / "traces.bin"));
  CHECK(std::filesystem::exists(td / "a" / "splits.json"));

  CHECK(run_cli(base + (td / "b").string(), td / "log_b") == 0);
  CHECK(contents_no_manifest(td / "a") == contents_no_manifest(td / "b"));

  // occupied output is refused, then replaced under --force
  CHECK(run_cli(base + (td / "a").string(), td / "log_c") == 2);
  const std::string log = vtest::slurp(td / "log_c");
  CHECK(log.find("--force") != std::string::npos);
  CHECK(run_cli(base + (td / "a").string() + " --force", td / "log_d") == 0);
  CHECK(contents_no_manifest(td / "a") == contents_no_manifest(td / "b"));
}

TEST_CASE("preprocess copies datasets bit-identically when no ops are requested") {
  TempDir td("cli_pp");
  write_text(td / "synth.json", kSynthJson);
  REQUIRE(run_cli("synth-gen --config " + (td / "synth.json").string() +
                      " --variants full --out " + (td / "ds").string(),
                  td / "log0") == 0);

  REQUIRE(run_cli("preprocess --in " + (td / "ds").string() + " --out " + (td / "copy").string(),
                  td / "log1") == 0);
  CHECK(vtest::dir_contents(td / "ds" / "movie_full") ==
        vtest::dir_contents(td / "copy" / "movie_full"));
  CHECK(vtest::dir_contents(td / "ds" / "mask") == vtest::dir_contents(td / "copy" / "mask"));
  CHECK(vtest::slurp(td / "ds" / "traces.bin") == vtest::slurp(td / "copy" / "traces.bin"));
  CHECK(vtest::slurp(td / "ds" / "splits.json") == vtest::slurp(td / "copy" / "splits.json"));

  // downsampling rewrites the movie extents and strides the mask to match
  REQUIRE(run_cli("preprocess --in " + (td / "ds").string() + " --out " + (td / "half").string() +
                      " --downsample 2,2,1",
                  td / "log2") == 0);
  const ChunkedVolume half = ChunkedVolume::open(td / "half" / "movie_full");
  CHECK(half.meta().dims == Vec4i{6, 5, 4, 60});
  const SegmentationMask m = SegmentationMask::load(td / "half" / "mask");
  CHECK(m.dims == Vec3i{6, 5, 4});
}

TEST_CASE("train, resume, and eval round trip through run directories") {
  TempDir td("cli_train");
  write_text(td / "synth.json", kSynthJson);
  write_text(td / "model.json", kModelJson);
  REQUIRE(run_cli("synth-gen --config " + (td / "synth.json").string() +
                      " --variants full --out " + (td / "ds").string(),
                  td / "log0") == 0);

  const std::string common = " --data " + (td / "ds").string() + " --model-config " +
                             (td / "model.json").string() + " --val-every 5 --seed 3 --out ";
  REQUIRE(run_cli("train --steps 10" + common + (td / "run1").string(), td / "log1") == 0);
  CHECK(std::filesystem::exists(td / "run1" / "best.ckpt"));
  CHECK(std::filesystem::exists(td / "run1" / "final.ckpt"));
  CHECK(std::filesystem::exists(td / "run1" / "manifest.json"));
  CHECK(count_lines(vtest::slurp(td / "run1" / "log.csv")) == 11);  // header + 10 steps
  CHECK(load_checkpoint(td / "run1" / "final.ckpt").step == 10);

  // resuming to a larger budget continues the schedule; a fresh run
  // directory gets a fresh log that starts at the restored step
  REQUIRE(run_cli("train --steps 20 --resume " + (td / "run1" / "final.ckpt").string() + common +
                      (td / "run2").string(),
                  td / "log2") == 0);
  const std::string log2 = vtest::slurp(td / "run2" / "log.csv");
  CHECK(count_lines(log2) == 11);  // header + steps 10..19
  CHECK(log2.find("\n10,") != std::string::npos);
  CHECK(load_checkpoint(td / "run2" / "final.ckpt").step == 20);

  REQUIRE(run_cli("eval --checkpoint " + (td / "run1" / "best.ckpt").string() + " --data " +
                      (td / "ds").string() + " --split test,val --svg --out " +
                      (td / "rep").string(),
                  td / "log3") == 0);
  for (const char* f : {"condition_test.csv", "condition_val.csv", "aggregate.csv",
                        "summary.csv", "mae_vs_horizon.svg", "manifest.json"})
    CHECK(std::filesystem::exists(td / "rep" / f));
  // the copy-last baseline gets the same report tree
  CHECK(std::filesystem::exists(td / "rep" / "baseline" / "condition_test.csv"));
  const std::string out3 = vtest::slurp(td / "log3");
  CHECK(out3.find("corr_h") != std::string::npos);
}

TEST_CASE("rf-report prints the receptive field accounting") {
  TempDir td("cli_rf");
  // four low-resolution blocks, no downsampling: rf 21
  std::string deep(kModelJson);
  deep.replace(deep.find("\"blocks_low\": 1"), 15, "\"blocks_low\": 4");
  write_text(td / "deep.json", deep);
  REQUIRE(run_cli("rf-report --model-config " + (td / "deep.json").string() + " --extent 8,8,4",
                  td / "log0") == 0);
  const std::string flat_out = vtest::slurp(td / "log0");
  CHECK(flat_out.find("receptive_field: 21 21 21") != std::string::npos);
  CHECK(flat_out.find("stencil_radius: 10 10 10") != std::string::npos);
  CHECK(flat_out.find("parameters: ") != std::string::npos);
  CHECK(flat_out.find("flops(extent=8,8,4)") != std::string::npos);

  // two downsampling stages plus 4x4x1 input pre-pooling
  std::string staged(deep);
  staged.replace(staged.find("\"stages\": []"), 12, "\"stages\": [[2,2,1],[2,2,2]]");
  staged.replace(staged.find("\"input_downsample\": [1, 1, 1]"), 29,
                 "\"input_downsample\": [4, 4, 1]");
  write_text(td / "staged.json", staged);
  REQUIRE(run_cli("rf-report --model-config " + (td / "staged.json").string() +
                      " --extent 32,32,8",
                  td / "log1") == 0);
  const std::string staged_out = vtest::slurp(td / "log1");
  CHECK(staged_out.find("receptive_field: 64 64 32") != std::string::npos);
  CHECK(staged_out.find("receptive_field_native: 256 256 32") != std::string::npos);
}

TEST_CASE("shard-plan prints and saves the decomposition") {
  TempDir td("cli_shard");
  std::string flat(kModelJson);
  flat.replace(flat.find("\"blocks_low\": 1"), 15, "\"blocks_low\": 2");
  write_text(td / "model.json", flat);

  REQUIRE(run_cli("shard-plan --model-config " + (td / "model.json").string() +
                      " --dims 16,16,4 --grid 2,2 --out " + (td / "plan").string(),
                  td / "log0") == 0);
  CHECK(vtest::slurp(td / "log0").find("\"halo\"") != std::string::npos);
  const nlohmann::json j =
      nlohmann::json::parse(vtest::slurp(td / "plan" / "shard_plan.json"));
  CHECK(j["halo"] == nlohmann::json({6, 6, 6}));
  CHECK(j["receptive_field"] == nlohmann::json({13, 13, 13}));
  CHECK(j["shards"].size() == 4);
  CHECK(std::filesystem::exists(td / "plan" / "manifest.json"));

  CHECK(run_cli("shard-plan --model-config " + (td / "model.json").string() +
                    " --dims 16,16,4 --grid 3,1",
                td / "log1") == 2);
}

}  // TEST_SUITE
