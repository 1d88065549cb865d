#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "geoadapt/adapt.hpp"
#include "geoadapt/augment.hpp"
#include "geoadapt/eval.hpp"
#include "geoadapt/geodata.hpp"
#include "geoadapt/image.hpp"
#include "geoadapt/labelgap.hpp"
#include "geoadapt/models.hpp"
#include "geoadapt/rng.hpp"
#include "geoadapt/tensor.hpp"

namespace py = pybind11;
using json = nlohmann::json;
using namespace geoadapt;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using MaskArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor tensor_from_array(const DoubleArray& arr) {
  std::vector<int> shape(static_cast<std::size_t>(arr.ndim()));
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) {
    shape[static_cast<std::size_t>(i)] = static_cast<int>(arr.shape(i));
  }
  Tensor t(shape);
  std::copy(arr.data(), arr.data() + arr.size(), t.data());
  return t;
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> arr(shape);
  std::copy(t.data(), t.data() + t.size(), arr.mutable_data());
  return arr;
}

Mask mask_from_array(const MaskArray& arr) {
  if (arr.ndim() != 2) throw std::invalid_argument("mask must be a 2-d uint8 array");
  Mask m(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
  std::copy(arr.data(), arr.data() + arr.size(), m.v.begin());
  return m;
}

py::array_t<std::uint8_t> array_from_mask(const Mask& m) {
  py::array_t<std::uint8_t> arr({static_cast<py::ssize_t>(m.h), static_cast<py::ssize_t>(m.w)});
  std::copy(m.v.begin(), m.v.end(), arr.mutable_data());
  return arr;
}

labelgap::FeatureMode feature_mode_from_name(const std::string& name) {
  if (name == "pool") return labelgap::FeatureMode::pool;
  if (name == "pool_stats") return labelgap::FeatureMode::pool_stats;
  throw std::invalid_argument("unknown feature mode: " + name);
}

labelgap::EmbedMethod embed_from_name(const std::string& spec) {
  if (spec == "identity") return labelgap::EmbedMethod::identity();
  if (spec.rfind("pca:", 0) == 0) {
    return labelgap::EmbedMethod::pca(std::stoi(spec.substr(4)));
  }
  if (spec.rfind("external:", 0) == 0) {
    return labelgap::EmbedMethod::external(spec.substr(9));
  }
  throw std::invalid_argument("unknown embedding spec: " + spec);
}

py::dict curve_to_dict(const labelgap::PurityCurve& curve) {
  py::dict d;
  d["merge_fraction"] = py::array_t<double>(
      static_cast<py::ssize_t>(curve.merge_fraction.size()), curve.merge_fraction.data());
  d["purity"] = py::array_t<double>(static_cast<py::ssize_t>(curve.purity.size()),
                                    curve.purity.data());
  d["auc"] = curve.auc;
  return d;
}

const geodata::DomainSpec& preset_domain(const geodata::BenchmarkPreset& preset,
                                         const std::string& domain) {
  for (const auto& spec : preset.sources) {
    if (spec.tag.name == domain) return spec;
  }
  if (preset.target.tag.name == domain) return preset.target;
  throw std::invalid_argument("preset " + preset.name + " has no domain " + domain);
}

adapt::TrainConfig config_from_kwargs(const std::string& mode, int iterations,
                                      int batch_size, std::uint64_t seed, int eval_every,
                                      double seg_lr, double disc_lr, double lambda_adv,
                                      double lambda_ent, bool entropy_min, double aug_p,
                                      bool adaptive_p) {
  adapt::TrainConfig config;
  config.mode = adapt::mode_from_name(mode);
  config.iterations = iterations;
  config.batch_size = batch_size;
  config.seed = seed;
  config.eval_every = eval_every;
  config.seg_lr = seg_lr;
  config.disc_lr = disc_lr;
  config.lambda_adv = lambda_adv;
  config.lambda_ent = lambda_ent;
  config.entropy_min_enabled = entropy_min;
  config.aug.p = aug_p;
  config.adaptive_p = adaptive_p;
  adapt::validate_config(config);
  return config;
}

py::dict record_to_dict(const eval::MetricsRecord& record) {
  py::dict d;
  d["benchmark"] = record.benchmark;
  d["mode"] = record.mode;
  d["seed"] = record.seed;
  d["iou_building"] = record.iou_building;
  d["iou_background"] = record.iou_background;
  if (record.delta_iou) {
    d["delta_iou"] = *record.delta_iou;
  } else {
    d["delta_iou"] = py::none();
  }
  d["iterations"] = record.iterations;
  d["monitor"] = record.monitor;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "geoadapt core: synthetic tiles, adversarial adaptation, label-gap metric";
  m.attr("__version__") = "0.1.0";

  // probability / entropy ops
  m.def(
      "softmax_probs",
      [](const DoubleArray& logits) {
        return array_from_tensor(models::softmax_probs(tensor_from_array(logits)));
      },
      py::arg("logits"), "Channel softmax over [B,H,W,C] logits.");
  m.def(
      "entropy_map",
      [](const DoubleArray& probs) {
        return array_from_tensor(models::entropy_map(tensor_from_array(probs)));
      },
      py::arg("probs"), "Normalized per-pixel entropy of [B,H,W,C] probabilities.");
  m.def(
      "self_information_map",
      [](const DoubleArray& probs) {
        return array_from_tensor(models::self_information_map(tensor_from_array(probs)));
      },
      py::arg("probs"), "Per-channel weighted self-information -P log(P+eps)/log C.");
  m.def(
      "mean_entropy",
      [](const DoubleArray& probs) { return models::mean_entropy(tensor_from_array(probs)); },
      py::arg("probs"));

  // synthetic geodata
  m.def("preset_names", &geodata::preset_names);
  m.def(
      "preset_domains",
      [](const std::string& preset) {
        auto p = geodata::benchmark_preset(preset);
        std::vector<std::string> sources;
        for (const auto& spec : p.sources) sources.push_back(spec.tag.name);
        py::dict d;
        d["name"] = p.name;
        d["sources"] = sources;
        d["target"] = p.target.tag.name;
        return d;
      },
      py::arg("preset"));
  m.def(
      "generate_tile",
      [](const std::string& preset, const std::string& domain, std::int64_t tile_seed,
         int size_px) {
        const auto p = geodata::benchmark_preset(preset);
        const auto& spec = preset_domain(p, domain);
        auto sample = geodata::generate_tile(spec.style, tile_seed, size_px);
        return py::make_tuple(array_from_tensor(sample.image), array_from_mask(sample.mask));
      },
      py::arg("preset"), py::arg("domain"), py::arg("tile_seed"), py::arg("size_px") = 128,
      "Render one tile; returns (image [H,W,3] float64, mask [H,W] uint8).");
  m.def(
      "generate_dataset",
      [](const std::string& preset, const std::string& domain, int n, std::uint64_t seed,
         const std::filesystem::path& out_dir, int size_px) {
        const auto p = geodata::benchmark_preset(preset);
        const auto& spec = preset_domain(p, domain);
        geodata::generate_dataset(spec.style, spec.tag, n, seed, out_dir, size_px);
        return (out_dir / "manifest.json").string();
      },
      py::arg("preset"), py::arg("domain"), py::arg("n"), py::arg("seed"), py::arg("out_dir"),
      py::arg("size_px") = 128, "Write n tiles plus manifest.json; returns the manifest path.");

  // augmentation
  m.def(
      "sample_plan",
      [](std::uint64_t seed, double p, bool geometric_only) {
        augment::AugmentationConfig config;
        config.p = p;
        config.geometric_only = geometric_only;
        Rng rng(seed);
        return augment::sample_pipeline(config, rng).to_json();
      },
      py::arg("seed"), py::arg("p") = 0.6, py::arg("geometric_only") = false,
      "Sample a transform plan (one Bernoulli(p) per op); returns the plan as JSON.");
  m.def(
      "apply_plan",
      [](const DoubleArray& image, const MaskArray& mask, const std::string& plan_json) {
        auto plan = augment::TransformPlan::from_json(plan_json);
        Tensor out_image;
        Mask out_mask;
        augment::augment_pair(tensor_from_array(image), mask_from_array(mask), plan, &out_image,
                              &out_mask);
        return py::make_tuple(array_from_tensor(out_image), array_from_mask(out_mask));
      },
      py::arg("image"), py::arg("mask"), py::arg("plan_json"));
  m.def(
      "augment_maps",
      [](const DoubleArray& maps, const std::vector<std::string>& plans_json) {
        std::vector<augment::TransformPlan> plans;
        plans.reserve(plans_json.size());
        for (const auto& text : plans_json) {
          plans.push_back(augment::TransformPlan::from_json(text));
        }
        return array_from_tensor(augment::augment_maps(tensor_from_array(maps), plans));
      },
      py::arg("maps"), py::arg("plans_json"),
      "Apply per-item geometric plans to [B,H,W,C] maps (zero fill).");

  // evaluation
  m.def(
      "pair_iou",
      [](const MaskArray& gt, const MaskArray& pred, int class_count) {
        auto counts =
            eval::confusion_counts(mask_from_array(gt), mask_from_array(pred), class_count);
        return eval::per_class_iou(counts);
      },
      py::arg("gt"), py::arg("pred"), py::arg("class_count") = 2,
      "Per-class IoU between one ground-truth and one predicted mask.");

  // label-gap metric
  m.def(
      "featurize_mask",
      [](const MaskArray& mask, int grid, const std::string& mode) {
        return labelgap::featurize_mask(mask_from_array(mask), grid,
                                        feature_mode_from_name(mode));
      },
      py::arg("mask"), py::arg("grid") = 32, py::arg("mode") = "pool");
  m.def(
      "purity_curve",
      [](const DoubleArray& features, const std::vector<int>& origins) {
        if (features.ndim() != 2) throw std::invalid_argument("features must be [n,k]");
        auto n = features.shape(0);
        if (static_cast<py::ssize_t>(origins.size()) != n) {
          throw std::invalid_argument("origins length must match feature rows");
        }
        std::vector<labelgap::LabelFeature> feats(static_cast<std::size_t>(n));
        for (py::ssize_t i = 0; i < n; ++i) {
          auto& f = feats[static_cast<std::size_t>(i)];
          f.vec.assign(features.data() + i * features.shape(1),
                       features.data() + (i + 1) * features.shape(1));
          f.origin = origins[static_cast<std::size_t>(i)] == 0 ? labelgap::Origin::source
                                                               : labelgap::Origin::target;
          f.id = static_cast<int>(i);
        }
        return curve_to_dict(labelgap::purity_curve(feats));
      },
      py::arg("features"), py::arg("origins"),
      "Single-linkage purity curve; origins are 0 (source) or 1 (target).");
  m.def(
      "label_gap",
      [](const std::vector<MaskArray>& source, const std::vector<MaskArray>& target, int grid,
         const std::string& mode, const std::string& embedding) {
        labelgap::MaskPair pair;
        pair.name = "pair";
        for (const auto& m : source) pair.source.push_back(mask_from_array(m));
        for (const auto& m : target) pair.target.push_back(mask_from_array(m));
        auto results = labelgap::compare_gaps({pair}, grid, feature_mode_from_name(mode),
                                              embed_from_name(embedding));
        const auto& r = results.front();
        py::dict d = curve_to_dict(r.curve);
        d["n_source"] = r.n_source;
        d["n_target"] = r.n_target;
        return d;
      },
      py::arg("source_masks"), py::arg("target_masks"), py::arg("grid") = 32,
      py::arg("mode") = "pool", py::arg("embedding") = "identity",
      "Purity curve and auc between two sets of masks.");

  // training
  m.def(
      "run_experiment",
      [](const std::string& mode, const std::vector<std::filesystem::path>& sources,
         const std::filesystem::path& target, const std::filesystem::path& out_dir,
         const std::string& benchmark, int iterations, int batch_size, std::uint64_t seed,
         int eval_every, double seg_lr, double disc_lr, double lambda_adv, double lambda_ent,
         bool entropy_min, double aug_p, bool adaptive_p) {
        auto config = config_from_kwargs(mode, iterations, batch_size, seed, eval_every, seg_lr,
                                         disc_lr, lambda_adv, lambda_ent, entropy_min, aug_p,
                                         adaptive_p);
        std::vector<geodata::Manifest> source_manifests;
        source_manifests.reserve(sources.size());
        for (const auto& path : sources) {
          source_manifests.push_back(geodata::load_manifest(path));
        }
        auto target_manifest = geodata::load_manifest(target);
        auto result =
            adapt::run_experiment(config, source_manifests, target_manifest, out_dir, benchmark);
        py::dict d = record_to_dict(result.record);
        d["metrics_path"] = result.metrics_path.string();
        d["final_checkpoint"] = result.final_checkpoint.string();
        d["best_checkpoint"] = result.best_checkpoint.string();
        return d;
      },
      py::arg("mode"), py::arg("sources"), py::arg("target"), py::arg("out_dir"),
      py::arg("benchmark") = "custom", py::arg("iterations") = 5000, py::arg("batch_size") = 4,
      py::arg("seed") = 0, py::arg("eval_every") = 250, py::arg("seg_lr") = 2.5e-4,
      py::arg("disc_lr") = 1e-4, py::arg("lambda_adv") = 1e-3, py::arg("lambda_ent") = 1e-3,
      py::arg("entropy_min") = false, py::arg("aug_p") = 0.6, py::arg("adaptive_p") = false,
      "Train one run and return its record plus artifact paths.");
  m.def(
      "evaluate_checkpoint",
      [](const std::filesystem::path& checkpoint, const std::filesystem::path& manifest_path) {
        auto state = adapt::load_checkpoint(checkpoint);
        auto manifest = geodata::load_manifest(manifest_path);
        auto ious = eval::dataset_iou(state.segmenter, manifest, manifest.class_count);
        py::dict d;
        d["iou_background"] = ious[0];
        d["iou_building"] = ious[1];
        return d;
      },
      py::arg("checkpoint"), py::arg("manifest"),
      "Load a checkpoint and report IoU over every tile in a manifest.");
}
