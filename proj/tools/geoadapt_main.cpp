// geoadapt: synthetic-city domain adaptation toolkit.
//
// Subcommands: gen-data, train, eval, gap, report. Exit codes: 0 success,
// 2 usage/config error, 3 runtime failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "geoadapt/adapt.hpp"
#include "geoadapt/augment.hpp"
#include "geoadapt/eval.hpp"
#include "geoadapt/geodata.hpp"
#include "geoadapt/labelgap.hpp"
#include "geoadapt/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace geoadapt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

/// Relative data paths resolve against GEOADAPT_DATA_ROOT when it is set.
fs::path resolve_data_path(const std::string& path) {
  fs::path p(path);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("GEOADAPT_DATA_ROOT")) return fs::path(root) / p;
  return p;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, value] : obj.items())
    if (!allowed.count(key))
      throw std::invalid_argument("config: unknown key \"" + key + "\" in " + where);
}

struct TrainSpec {
  std::string name = "custom";
  adapt::TrainConfig config;
  std::vector<std::string> sources;
  std::string target;
  fs::path out_dir;
};

TrainSpec parse_train_config(const json& doc) {
  reject_unknown_keys(
      doc,
      {"name", "mode", "sources", "target", "out_dir", "iterations", "batch_size", "seed",
       "eval_every", "checkpoint_every", "seg_lr", "disc_lr", "momentum",
       "weight_decay", "poly_power",
       "lambda_adv", "lambda_ent", "entropy_min", "aug", "monitor"},
      "top level");

  TrainSpec spec;
  if (doc.contains("name")) spec.name = doc.at("name").get<std::string>();
  for (const char* key : {"mode", "sources", "target", "out_dir"})
    if (!doc.contains(key))
      throw std::invalid_argument(std::string("config: missing required key \"") + key +
                                  "\"");

  adapt::TrainConfig& c = spec.config;
  c.mode = adapt::mode_from_name(doc.at("mode").get<std::string>());
  spec.sources = doc.at("sources").get<std::vector<std::string>>();
  if (spec.sources.empty()) throw std::invalid_argument("config: sources is empty");
  spec.target = doc.at("target").get<std::string>();
  spec.out_dir = doc.at("out_dir").get<std::string>();

  if (doc.contains("iterations")) c.iterations = doc.at("iterations").get<int>();
  if (doc.contains("batch_size")) c.batch_size = doc.at("batch_size").get<int>();
  if (doc.contains("seed")) c.seed = doc.at("seed").get<std::uint64_t>();
  if (doc.contains("eval_every")) c.eval_every = doc.at("eval_every").get<int>();
  if (doc.contains("checkpoint_every"))
    c.checkpoint_every = doc.at("checkpoint_every").get<int>();
  if (doc.contains("seg_lr")) c.seg_lr = doc.at("seg_lr").get<double>();
  if (doc.contains("disc_lr")) c.disc_lr = doc.at("disc_lr").get<double>();
  if (doc.contains("momentum")) c.momentum = doc.at("momentum").get<double>();
  if (doc.contains("weight_decay")) c.weight_decay = doc.at("weight_decay").get<double>();
  if (doc.contains("poly_power")) c.poly_power = doc.at("poly_power").get<double>();
  if (doc.contains("lambda_adv")) c.lambda_adv = doc.at("lambda_adv").get<double>();
  if (doc.contains("lambda_ent")) c.lambda_ent = doc.at("lambda_ent").get<double>();
  if (doc.contains("entropy_min")) c.entropy_min_enabled = doc.at("entropy_min").get<bool>();

  if (doc.contains("aug")) {
    const json& aug = doc.at("aug");
    reject_unknown_keys(aug, {"p", "ops", "adaptive", "geometric_only"}, "aug");
    if (aug.contains("p")) c.aug.p = aug.at("p").get<double>();
    if (aug.contains("adaptive")) c.adaptive_p = aug.at("adaptive").get<bool>();
    if (aug.contains("geometric_only"))
      c.aug.geometric_only = aug.at("geometric_only").get<bool>();
    if (aug.contains("ops")) {
      c.aug.ops.clear();
      for (const auto& name : aug.at("ops"))
        c.aug.ops.push_back(augment::op_from_name(name.get<std::string>()));
    }
  }
  if (doc.contains("monitor")) {
    const json& mon = doc.at("monitor");
    reject_unknown_keys(mon, {"disc_acc_threshold", "disc_acc_iters", "iou_collapse_fraction"},
                        "monitor");
    if (mon.contains("disc_acc_threshold"))
      c.monitor.disc_acc_threshold = mon.at("disc_acc_threshold").get<double>();
    if (mon.contains("disc_acc_iters"))
      c.monitor.disc_acc_iters = mon.at("disc_acc_iters").get<int>();
    if (mon.contains("iou_collapse_fraction"))
      c.monitor.iou_collapse_fraction = mon.at("iou_collapse_fraction").get<double>();
  }
  adapt::validate_config(c);
  return spec;
}

int cmd_gen_data(const std::string& preset_name, int n, std::uint64_t seed,
                 const fs::path& out, int tile_size) {
  if (n < 1) throw std::invalid_argument("--n must be >= 1");
  const geodata::BenchmarkPreset preset = geodata::benchmark_preset(preset_name);
  std::vector<geodata::DomainSpec> domains = preset.sources;
  domains.push_back(preset.target);
  for (const auto& domain : domains) {
    const std::uint64_t domain_seed =
        derive_seed(seed, {rng_tag("cli/gen-data"), rng_tag(domain.tag.name)});
    geodata::generate_dataset(domain.style, domain.tag, n, domain_seed,
                              out / domain.tag.name, tile_size);
    std::cout << domain.tag.name << ": " << (out / domain.tag.name / "manifest.json").string()
              << "\n";
  }
  return kExitOk;
}

int cmd_train(const fs::path& config_path, const std::string& mode_override,
              std::optional<std::uint64_t> seed_override, const std::string& resume) {
  const TrainSpec base = parse_train_config(json::parse(read_text_file(config_path)));
  TrainSpec spec = base;
  if (!mode_override.empty()) spec.config.mode = adapt::mode_from_name(mode_override);
  if (seed_override) spec.config.seed = *seed_override;

  std::vector<geodata::Manifest> sources;
  for (const auto& path : spec.sources)
    sources.push_back(geodata::load_manifest(resolve_data_path(path)));
  const geodata::Manifest target = geodata::load_manifest(resolve_data_path(spec.target));

  std::optional<fs::path> resume_path;
  if (!resume.empty()) resume_path = fs::path(resume);

  const auto result = adapt::run_experiment(spec.config, sources, target, spec.out_dir,
                                            spec.name, resume_path);
  std::cout << eval::record_to_json(result.record) << "\n";
  return kExitOk;
}

int cmd_eval(const fs::path& checkpoint, const std::string& manifest_path,
             const std::string& panels, int panel_count, std::uint64_t panel_seed) {
  const adapt::TrainState state = adapt::load_checkpoint(checkpoint);
  const geodata::Manifest manifest = geodata::load_manifest(resolve_data_path(manifest_path));
  const auto ious =
      eval::dataset_iou(state.segmenter, manifest, state.segmenter.desc.class_count);
  const json out{{"iou_background", ious[0]}, {"iou_building", ious[1]}};
  std::cout << out.dump() << "\n";

  if (!panels.empty()) {
    if (panel_count < 1) throw std::invalid_argument("--panel-count must be >= 1");
    Rng rng = substream(panel_seed, {rng_tag("cli/panels")});
    std::vector<geodata::Sample> samples;
    const auto limit = std::min<std::size_t>(static_cast<std::size_t>(panel_count),
                                             manifest.entries.size());
    for (std::size_t i = 0; i < limit; ++i)
      samples.push_back(geodata::load_sample(manifest, rng.uniform_int(manifest.entries.size())));
    eval::render_predictions({&state.segmenter}, samples, panels);
  }
  return kExitOk;
}

int cmd_gap(const fs::path& pairs_path, int grid, const std::string& features,
            const std::string& embedding, const fs::path& out_dir) {
  labelgap::FeatureMode mode;
  if (features == "pool") {
    mode = labelgap::FeatureMode::pool;
  } else if (features == "pool_stats") {
    mode = labelgap::FeatureMode::pool_stats;
  } else {
    throw std::invalid_argument("--features must be pool or pool_stats");
  }

  labelgap::EmbedMethod method = labelgap::EmbedMethod::identity();
  if (embedding == "identity") {
  } else if (embedding.rfind("pca:", 0) == 0) {
    method = labelgap::EmbedMethod::pca(std::stoi(embedding.substr(4)));
  } else if (embedding.rfind("external:", 0) == 0) {
    method = labelgap::EmbedMethod::external(embedding.substr(9));
  } else {
    throw std::invalid_argument("--embedding must be identity, pca:K, or external:PATH");
  }

  const json doc = json::parse(read_text_file(pairs_path));
  std::vector<labelgap::MaskPair> pairs;
  for (const auto& entry : doc) {
    reject_unknown_keys(entry, {"name", "source", "target"}, "pairs entry");
    labelgap::MaskPair pair;
    pair.name = entry.at("name").get<std::string>();
    const auto load_masks = [](const std::string& path) {
      const geodata::Manifest m = geodata::load_manifest(resolve_data_path(path));
      std::vector<Mask> masks;
      masks.reserve(m.entries.size());
      for (std::size_t i = 0; i < m.entries.size(); ++i)
        masks.push_back(geodata::load_sample(m, i).mask);
      return masks;
    };
    pair.source = load_masks(entry.at("source").get<std::string>());
    pair.target = load_masks(entry.at("target").get<std::string>());
    pairs.push_back(std::move(pair));
  }

  const auto results = labelgap::compare_gaps(pairs, grid, mode, method);
  fs::create_directories(out_dir);
  std::string ranking = "pair,auc\n";
  for (const auto& r : results) {
    write_text_file(out_dir / (r.name + "_curve.csv"), labelgap::curve_to_csv(r.curve));
    write_text_file(out_dir / (r.name + ".json"), labelgap::gap_summary_json(r) + "\n");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", r.curve.auc);
    ranking += r.name + "," + buf + "\n";
    std::cout << r.name << " " << r.curve.auc << "\n";
  }
  write_text_file(out_dir / "ranking.csv", ranking);
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& run_paths, const std::string& out_prefix) {
  std::vector<eval::MetricsRecord> records;
  for (const auto& raw : run_paths) {
    fs::path path = resolve_data_path(raw);
    if (fs::is_directory(path)) path /= "record.json";
    records.push_back(eval::record_from_json(read_text_file(path)));
  }
  const eval::Report report = eval::render_report(records);
  std::cout << report.text;
  if (!out_prefix.empty()) {
    write_text_file(out_prefix + ".txt", report.text);
    write_text_file(out_prefix + ".csv", report.csv);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic-city domain adaptation toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "generate benchmark datasets");
  std::string gen_preset;
  int gen_n = 256;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  int gen_tile = 128;
  gen->add_option("--preset", gen_preset, "benchmark preset name")->required();
  gen->add_option("--n", gen_n, "tiles per domain");
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--tile-size", gen_tile, "tile edge in pixels");

  auto* train = app.add_subcommand("train", "run a training experiment");
  std::string train_config, train_mode, train_resume;
  std::int64_t train_seed = -1;
  train->add_option("--config", train_config, "experiment config JSON")->required();
  train->add_option("--mode", train_mode, "override config mode");
  train->add_option("--seed", train_seed, "override config seed");
  train->add_option("--resume", train_resume, "checkpoint to resume from");

  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  std::string eval_ckpt, eval_manifest, eval_panels;
  int eval_panel_count = 4;
  std::uint64_t eval_panel_seed = 0;
  evalc->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  evalc->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  evalc->add_option("--panels", eval_panels, "write prediction panels PNG here");
  evalc->add_option("--panel-count", eval_panel_count, "samples to render");
  evalc->add_option("--panel-seed", eval_panel_seed, "sample selection seed");

  auto* gap = app.add_subcommand("gap", "compare label-distribution gaps");
  std::string gap_pairs, gap_features = "pool", gap_embedding = "identity", gap_out;
  int gap_grid = 32;
  gap->add_option("--pairs", gap_pairs, "JSON list of {name, source, target}")->required();
  gap->add_option("--grid", gap_grid, "pooling grid");
  gap->add_option("--features", gap_features, "pool or pool_stats");
  gap->add_option("--embedding", gap_embedding, "identity, pca:K, or external:PATH");
  gap->add_option("--out", gap_out, "output directory")->required();

  auto* report = app.add_subcommand("report", "tabulate run records");
  std::vector<std::string> report_runs;
  std::string report_out;
  report->add_option("--runs", report_runs, "record.json files or run directories")
      ->required();
  report->add_option("--out", report_out, "output path prefix (.txt/.csv appended)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_preset, gen_n, gen_seed, gen_out, gen_tile);
    if (train->parsed()) {
      std::optional<std::uint64_t> seed_override;
      if (train_seed >= 0) seed_override = static_cast<std::uint64_t>(train_seed);
      return cmd_train(train_config, train_mode, seed_override, train_resume);
    }
    if (evalc->parsed())
      return cmd_eval(eval_ckpt, eval_manifest, eval_panels, eval_panel_count,
                      eval_panel_seed);
    if (gap->parsed()) return cmd_gap(gap_pairs, gap_grid, gap_features, gap_embedding, gap_out);
    if (report->parsed()) return cmd_report(report_runs, report_out);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
