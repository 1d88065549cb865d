#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "geoadapt/image.hpp"

namespace geoadapt::labelgap {

enum class Origin { source, target };

struct LabelFeature {
  std::vector<double> vec;
  Origin origin = Origin::source;
  int id = 0;
};

enum class FeatureMode { pool, pool_stats };

/// Average-pools the building indicator to grid x grid and flattens it
/// row-major. pool_stats appends 11 summary values: building fraction,
/// connected-component count / 100, mean component area / (H*W), and an
/// 8-bin histogram of component principal-axis orientations weighted by
/// area fraction.
std::vector<double> featurize_mask(const Mask& mask, int grid = 32,
                                   FeatureMode mode = FeatureMode::pool);

struct EmbedMethod {
  enum class Kind { identity, pca, external };
  Kind kind = Kind::identity;
  int k = 0;                    // pca output dimension
  std::filesystem::path path;   // external coordinate file

  static EmbedMethod identity() { return {}; }
  static EmbedMethod pca(int k) { return {Kind::pca, k, {}}; }
  static EmbedMethod external(std::filesystem::path path) {
    return {Kind::external, 0, std::move(path)};
  }
};

/// identity passes through; pca centers and projects onto the top-k
/// principal directions (each direction's largest-magnitude coefficient
/// made positive); external looks coordinates up by feature id in a CSV
/// with header id,x1,..,xk.
std::vector<LabelFeature> embed(const std::vector<LabelFeature>& features,
                                const EmbedMethod& method);

struct PurityCurve {
  std::vector<double> merge_fraction;  // k/(n-1), strictly increasing to 1
  std::vector<double> purity;          // size-weighted mean majority fraction
  double auc = 0.0;                    // mean purity over the n-1 merges
};

/// Single-linkage merge sequence from the Euclidean MST. Edges are merged
/// in ascending length; among equal lengths the merge producing the
/// smallest cluster goes first (then lowest endpoint ids), which keeps
/// early purity values from hiding still-separate groups.
PurityCurve purity_curve(const std::vector<LabelFeature>& features);

std::string curve_to_csv(const PurityCurve& curve);

struct MaskPair {
  std::string name;
  std::vector<Mask> source;
  std::vector<Mask> target;
};

struct GapResult {
  std::string name;
  std::size_t n_source = 0;
  std::size_t n_target = 0;
  PurityCurve curve;
};

std::string gap_summary_json(const GapResult& result);

/// Featurizes and embeds each pair's masks, computes purity curves, and
/// returns results sorted by descending auc (ties by name).
std::vector<GapResult> compare_gaps(const std::vector<MaskPair>& pairs, int grid,
                                    FeatureMode mode, const EmbedMethod& method);

}  // namespace geoadapt::labelgap
