#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geoadapt/geodata.hpp"
#include "geoadapt/image.hpp"
#include "geoadapt/models.hpp"
#include "geoadapt/tensor.hpp"

namespace geoadapt::eval {

/// Row-major C x C pixel counts; at(gt, pred).
struct Confusion {
  int class_count = 0;
  std::vector<std::int64_t> counts;

  explicit Confusion(int c)
      : class_count(c), counts(static_cast<std::size_t>(c) * c, 0) {}
  std::int64_t& at(int gt, int pred) {
    return counts[static_cast<std::size_t>(gt) * class_count + pred];
  }
  std::int64_t at(int gt, int pred) const {
    return counts[static_cast<std::size_t>(gt) * class_count + pred];
  }
  std::int64_t total() const;
};

Confusion confusion_counts(const Mask& pred, const Mask& gt, int class_count);
void accumulate_confusion(Confusion& acc, const Mask& pred, const Mask& gt);

/// TP / (TP + FP + FN). A class absent from both masks scores 1.0.
double iou(const Confusion& counts, int c);
std::vector<double> per_class_iou(const Confusion& counts);

/// Argmax over the channel dimension of [H,W,C] or of one batch item.
Mask predict_mask(const models::Segmenter& net, const Tensor& image);

/// One confusion matrix accumulated over the whole dataset, then IoU.
/// This is not a mean of per-tile IoUs.
std::vector<double> dataset_iou(const models::Segmenter& net,
                                const geodata::Manifest& manifest, int class_count);

/// adapted - source_only, in whatever unit both carry.
double delta_iou(double adapted, double source_only);

struct MetricsRecord {
  std::string benchmark;
  std::string mode;  // source_only | advent | advent_aug
  std::uint64_t seed = 0;
  double iou_building = 0.0;
  double iou_background = 0.0;
  std::optional<double> delta_iou;  // present when paired with a source-only run
  int iterations = 0;
  std::string monitor = "healthy";
};

std::string records_to_csv(const std::vector<MetricsRecord>& records);
std::vector<MetricsRecord> records_from_csv(const std::string& csv);

std::string record_to_json(const MetricsRecord& record);
MetricsRecord record_from_json(const std::string& text);

struct Report {
  std::string text;  // aligned table
  std::string csv;
};

/// Benchmarks as columns; rows "IoU (ADVENT)", "IoU (src-only)", "Δ IoU".
/// Adapted values average advent/advent_aug records per benchmark, src-only
/// values average source_only records; Δ is the difference of those means.
Report render_report(const std::vector<MetricsRecord>& records);

/// One row of panels per sample: [input | ground truth | one prediction per
/// model], written as a single PNG. Masks render with a fixed two-color
/// palette.
void render_predictions(const std::vector<const models::Segmenter*>& nets,
                        const std::vector<geodata::Sample>& samples,
                        const std::filesystem::path& out_path);

}  // namespace geoadapt::eval
