#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <sys/wait.h>
#include <vector>

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string cli() {
  const char* path = std::getenv("GEOADAPT_CLI");
  REQUIRE_MESSAGE(path != nullptr, "GEOADAPT_CLI must point at the binary");
  return path;
}

fs::path work_root() {
  static const fs::path root = [] {
    auto dir = fs::temp_directory_path() / "geoadapt_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
  }();
  return root;
}

int run(const std::string& args, const fs::path& stdout_file = {}) {
  std::string cmd = cli() + " " + args;
  cmd += stdout_file.empty() ? " >/dev/null 2>&1"
                             : " >" + stdout_file.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -2;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// path -> bytes for every regular file under root, keyed by relative path
std::map<std::string, std::string> dir_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root))
    if (entry.is_regular_file())
      out[fs::relative(entry.path(), root).string()] = read_file(entry.path());
  return out;
}

/// 6 tiles per domain, 32 px, shared by the training-related cases
fs::path dataset_dir() {
  static const fs::path dir = [] {
    const fs::path out = work_root() / "data";
    REQUIRE(run("gen-data --preset v2k --n 6 --seed 5 --tile-size 32 --out " +
                out.string()) == 0);
    return out;
  }();
  return dir;
}

fs::path write_train_config(const std::string& leaf, const json& overrides) {
  json doc{{"name", "v2k-mini"},
           {"mode", "source_only"},
           {"sources", {(dataset_dir() / "vegas" / "manifest.json").string()}},
           {"target", (dataset_dir() / "khartoum" / "manifest.json").string()},
           {"out_dir", (work_root() / leaf / "run").string()},
           {"iterations", 4},
           {"batch_size", 2},
           {"seed", 3},
           {"eval_every", 4}};
  for (const auto& [key, value] : overrides.items()) doc[key] = value;
  fs::create_directories(work_root() / leaf);
  const fs::path path = work_root() / leaf / "config.json";
  std::ofstream(path) << doc.dump(2);
  return path;
}

}  // namespace

TEST_CASE("gen-data writes one manifest per domain, byte-identically on rerun") {
  const fs::path a = work_root() / "gen_a";
  const fs::path b = work_root() / "gen_b";
  REQUIRE(run("gen-data --preset v2k --n 3 --seed 9 --tile-size 32 --out " + a.string()) ==
          0);
  REQUIRE(run("gen-data --preset v2k --n 3 --seed 9 --tile-size 32 --out " + b.string()) ==
          0);

  CHECK(fs::exists(a / "vegas" / "manifest.json"));
  CHECK(fs::exists(a / "khartoum" / "manifest.json"));
  const auto left = dir_contents(a);
  CHECK(left.size() == 2 * (3 + 3 + 1));  // per domain: 3 images, 3 masks, manifest
  CHECK(left == dir_contents(b));
}

TEST_CASE("gen-data rejects bad usage") {
  const std::string out = (work_root() / "gen_bad").string();
  CHECK(run("gen-data --preset v2k --n 0 --out " + out) == 2);
  CHECK(run("gen-data --preset v9k --n 2 --out " + out) == 2);
  CHECK(run("gen-data --n 2 --out " + out) == 2);  // --preset is required
  CHECK(run("frobnicate") == 2);
}

TEST_CASE("train runs a smoke experiment and prints the run record") {
  const auto config = write_train_config("train_smoke", {});
  const fs::path out = work_root() / "train_smoke" / "run";
  const fs::path stdout_file = work_root() / "train_smoke" / "stdout.txt";
  REQUIRE(run("train --config " + config.string(), stdout_file) == 0);

  CHECK(fs::exists(out / "metrics.jsonl"));
  CHECK(fs::exists(out / "final.ckpt"));
  CHECK(fs::exists(out / "record.json"));

  const json record = json::parse(read_file(stdout_file));
  CHECK(record.at("benchmark") == "v2k-mini");
  CHECK(record.at("mode") == "source_only");
  CHECK(record.at("iterations") == 4);
}

TEST_CASE("train rejects broken configs") {
  CHECK(run("train --config " + (work_root() / "missing.json").string()) == 2);

  const auto bad_key = write_train_config("train_bad_key", {{"optimiser", "sgd"}});
  CHECK(run("train --config " + bad_key.string()) == 2);

  const auto bad_mode = write_train_config("train_bad_mode", {{"mode", "finetune"}});
  CHECK(run("train --config " + bad_mode.string()) == 2);

  const auto bad_value = write_train_config("train_bad_value", {{"eval_every", 0}});
  CHECK(run("train --config " + bad_value.string()) == 2);

  const fs::path not_json = work_root() / "not_json.json";
  std::ofstream(not_json) << "]{[";
  CHECK(run("train --config " + not_json.string()) == 2);
}

TEST_CASE("train --mode and --seed override the config") {
  const auto config = write_train_config("train_override", {});
  const fs::path stdout_file = work_root() / "train_override" / "stdout.txt";
  REQUIRE(run("train --config " + config.string() + " --mode advent --seed 11",
              stdout_file) == 0);
  const json record = json::parse(read_file(stdout_file));
  CHECK(record.at("mode") == "advent");
  CHECK(record.at("seed") == 11);
}

TEST_CASE("train --resume reproduces the uninterrupted artifacts") {
  const json cadence{{"iterations", 6}, {"eval_every", 3}, {"checkpoint_every", 4}};
  const auto full_config = write_train_config("resume_full", cadence);
  const fs::path full_out = work_root() / "resume_full" / "run";
  REQUIRE(run("train --config " + full_config.string()) == 0);
  REQUIRE(fs::exists(full_out / "last.ckpt"));

  auto resumed_config = write_train_config("resume_again", cadence);
  const fs::path resumed_out = work_root() / "resume_again" / "run";
  REQUIRE(run("train --config " + resumed_config.string() + " --resume " +
              (full_out / "last.ckpt").string()) == 0);

  CHECK(read_file(resumed_out / "metrics.jsonl") == read_file(full_out / "metrics.jsonl"));
  CHECK(read_file(resumed_out / "record.json") == read_file(full_out / "record.json"));
  CHECK(read_file(resumed_out / "final.ckpt") == read_file(full_out / "final.ckpt"));

  // a checkpoint from a different seed is rejected
  const auto other_seed = write_train_config("resume_other", json{{"seed", 4}});
  CHECK(run("train --config " + other_seed.string() + " --resume " +
            (full_out / "last.ckpt").string()) == 2);
}

TEST_CASE("eval reports dataset IoU and renders panels") {
  const auto config = write_train_config("eval_run", {});
  const fs::path run_dir = work_root() / "eval_run" / "run";
  REQUIRE(run("train --config " + config.string()) == 0);

  const std::string manifest = (dataset_dir() / "khartoum" / "manifest.json").string();
  const fs::path stdout_file = work_root() / "eval_run" / "stdout.txt";
  const fs::path panels = work_root() / "eval_run" / "panels.png";
  REQUIRE(run("eval --checkpoint " + (run_dir / "final.ckpt").string() + " --manifest " +
              manifest + " --panels " + panels.string() + " --panel-count 2",
              stdout_file) == 0);

  const json out = json::parse(read_file(stdout_file));
  CHECK(out.at("iou_background").get<double>() >= 0.0);
  CHECK(out.at("iou_background").get<double>() <= 1.0);
  CHECK(out.at("iou_building").get<double>() >= 0.0);
  CHECK(out.at("iou_building").get<double>() <= 1.0);
  CHECK(fs::exists(panels));

  CHECK(run("eval --checkpoint " + (run_dir / "nope.ckpt").string() + " --manifest " +
            manifest) == 2);
  CHECK(run("eval --checkpoint " + (run_dir / "final.ckpt").string() +
            " --manifest missing/manifest.json") == 2);
}

TEST_CASE("GEOADAPT_DATA_ROOT anchors relative data paths") {
  const auto config = write_train_config("dataroot", {});
  const fs::path run_dir = work_root() / "dataroot" / "run";
  REQUIRE(run("train --config " + config.string()) == 0);

  const fs::path stdout_file = work_root() / "dataroot" / "stdout.txt";
  const std::string cmd = "GEOADAPT_DATA_ROOT=" + dataset_dir().string() + " " + cli() +
                          " eval --checkpoint " + (run_dir / "final.ckpt").string() +
                          " --manifest khartoum/manifest.json >" + stdout_file.string() +
                          " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  CHECK(WEXITSTATUS(status) == 0);
  CHECK(json::parse(read_file(stdout_file)).contains("iou_building"));
}

TEST_CASE("gap ranks pairs and writes curves") {
  const fs::path out = work_root() / "gap_out";
  const fs::path pairs = work_root() / "pairs.json";
  {
    const json doc = json::array(
        {{{"name", "v2k"},
          {"source", (dataset_dir() / "vegas" / "manifest.json").string()},
          {"target", (dataset_dir() / "khartoum" / "manifest.json").string()}}});
    std::ofstream(pairs) << doc.dump();
  }
  const fs::path stdout_file = work_root() / "gap_stdout.txt";
  REQUIRE(run("gap --pairs " + pairs.string() + " --grid 8 --features pool " +
              "--embedding identity --out " + out.string(),
              stdout_file) == 0);

  CHECK(fs::exists(out / "v2k_curve.csv"));
  CHECK(fs::exists(out / "v2k.json"));
  const auto ranking = read_file(out / "ranking.csv");
  CHECK(ranking.rfind("pair,auc\nv2k,", 0) == 0);
  const auto curve = read_file(out / "v2k_curve.csv");
  CHECK(curve.rfind("merge_fraction,purity\n", 0) == 0);
  const json summary = json::parse(read_file(out / "v2k.json"));
  CHECK(summary.at("n_source") == 6);
  CHECK(summary.at("n_target") == 6);
  CHECK(read_file(stdout_file).rfind("v2k ", 0) == 0);

  CHECK(run("gap --pairs " + pairs.string() + " --features sketch --out " + out.string()) ==
        2);
  CHECK(run("gap --pairs " + pairs.string() + " --embedding umap --out " + out.string()) ==
        2);
  CHECK(run("gap --pairs " + (work_root() / "nope.json").string() + " --out " +
            out.string()) == 2);
}

TEST_CASE("report tabulates run records from files and directories") {
  const fs::path dir = work_root() / "report";
  fs::create_directories(dir / "run_a");
  const auto write_record = [&](const fs::path& path, const std::string& mode,
                                double iou) {
    const json doc{{"benchmark", "v2k"},     {"mode", mode},
                   {"seed", 7},              {"iou_building", iou},
                   {"iou_background", 90.0}, {"delta_iou", nullptr},
                   {"iterations", 2000},     {"monitor", "healthy"}};
    std::ofstream(path) << doc.dump();
  };
  write_record(dir / "run_a" / "record.json", "advent", 13.59);
  write_record(dir / "adapted.json", "source_only", 15.09);

  const fs::path stdout_file = dir / "stdout.txt";
  REQUIRE(run("report --runs " + (dir / "run_a").string() + " " +
              (dir / "adapted.json").string() + " --out " + (dir / "table").string(),
              stdout_file) == 0);

  const std::string text = read_file(stdout_file);
  CHECK(text.find("IoU (ADVENT)") != std::string::npos);
  CHECK(text.find("IoU (src-only)") != std::string::npos);
  CHECK(text.find("-1.50") != std::string::npos);
  CHECK(read_file(dir / "table.txt") == text);
  CHECK(read_file(dir / "table.csv") ==
        "row,v2k\n"
        "IoU (ADVENT),13.59\n"
        "IoU (src-only),15.09\n"
        "Δ IoU,-1.50\n");

  CHECK(run("report --runs " + (dir / "absent.json").string()) == 2);
}
