#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "geoadapt/labelgap.hpp"
#include "geoadapt/rng.hpp"

using namespace geoadapt;
using namespace geoadapt::labelgap;
namespace fs = std::filesystem;

namespace {

LabelFeature feature(std::vector<double> vec, Origin origin, int id) {
  return {std::move(vec), origin, id};
}

std::vector<LabelFeature> points_1d(const std::vector<double>& source,
                                    const std::vector<double>& target) {
  std::vector<LabelFeature> out;
  int id = 0;
  for (double x : source) out.push_back(feature({x}, Origin::source, id++));
  for (double x : target) out.push_back(feature({x}, Origin::target, id++));
  return out;
}

// single linkage replayed over all n(n-1)/2 edges in ascending length; each
// union is one merge event, purity recomputed by scanning cluster labels
std::vector<double> all_pairs_purity(const std::vector<LabelFeature>& features) {
  const int n = static_cast<int>(features.size());
  struct Edge {
    double d2;
    int u, v;
  };
  std::vector<Edge> edges;
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < features[static_cast<std::size_t>(u)].vec.size(); ++k) {
        const double d = features[static_cast<std::size_t>(u)].vec[k] -
                         features[static_cast<std::size_t>(v)].vec[k];
        d2 += d * d;
      }
      edges.push_back({d2, u, v});
    }
  std::sort(edges.begin(), edges.end(), [](const Edge& a, const Edge& b) {
    return std::tie(a.d2, a.u, a.v) < std::tie(b.d2, b.u, b.v);
  });

  std::vector<int> parent(static_cast<std::size_t>(n));
  std::iota(parent.begin(), parent.end(), 0);
  const auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)];
    return x;
  };

  std::vector<double> purity;
  for (const auto& e : edges) {
    const int ru = find(e.u), rv = find(e.v);
    if (ru == rv) continue;
    parent[static_cast<std::size_t>(ru)] = rv;

    std::map<int, std::pair<int, int>> clusters;  // root -> (source, target)
    for (int i = 0; i < n; ++i) {
      auto& c = clusters[find(i)];
      (features[static_cast<std::size_t>(i)].origin == Origin::source ? c.first : c.second)++;
    }
    int majority_sum = 0;
    for (const auto& [root, c] : clusters) majority_sum += std::max(c.first, c.second);
    purity.push_back(static_cast<double>(majority_sum) / n);
  }
  return purity;
}

std::vector<LabelFeature> random_instance(Rng& rng, int n, int d) {
  std::vector<LabelFeature> out;
  for (int i = 0; i < n; ++i) {
    std::vector<double> vec(static_cast<std::size_t>(d));
    for (auto& v : vec) v = rng.uniform();
    const Origin origin = i == 0                  ? Origin::source
                          : i == 1                ? Origin::target
                          : rng.bernoulli(0.5) ? Origin::source
                                                  : Origin::target;
    out.push_back(feature(std::move(vec), origin, i));
  }
  return out;
}

Mask block_mask(int h, int w, int y0, int x0, int side) {
  Mask mask(h, w);
  for (int y = y0; y < y0 + side; ++y)
    for (int x = x0; x < x0 + side; ++x) mask.at(y, x) = 1;
  return mask;
}

}  // namespace

TEST_CASE("featurize pools the building indicator onto the grid") {
  SUBCASE("empty and full masks") {
    const auto zeros = featurize_mask(Mask(8, 8), 4);
    REQUIRE(zeros.size() == 16);
    for (double v : zeros) CHECK(v == 0.0);

    Mask full(8, 8);
    for (auto& v : full.v) v = 1;
    const auto ones = featurize_mask(full, 4);
    for (double v : ones) CHECK(v == 1.0);
  }
  SUBCASE("top-left quadrant fills exactly one 2x2 grid cell") {
    const auto vec = featurize_mask(block_mask(8, 8, 0, 0, 4), 2);
    REQUIRE(vec.size() == 4);
    CHECK(vec[0] == doctest::Approx(1.0));
    CHECK(vec[1] == doctest::Approx(0.0));
    CHECK(vec[2] == doctest::Approx(0.0));
    CHECK(vec[3] == doctest::Approx(0.0));
  }
  SUBCASE("grid 1 reduces to the building fraction") {
    const auto vec = featurize_mask(block_mask(8, 8, 2, 2, 4), 1);
    REQUIRE(vec.size() == 1);
    CHECK(vec[0] == doctest::Approx(16.0 / 64.0));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS((void)featurize_mask(Mask(8, 8), 0), std::invalid_argument);
    CHECK_THROWS_AS((void)featurize_mask(Mask(4, 4), 8), std::invalid_argument);
  }
}

TEST_CASE("pool_stats appends component summaries") {
  // two disjoint 2x2 blocks in a 8x8 mask
  Mask mask(8, 8);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x) {
      mask.at(y, x) = 1;
      mask.at(5 + y, 5 + x) = 1;
    }
  const auto vec = featurize_mask(mask, 4, FeatureMode::pool_stats);
  REQUIRE(vec.size() == 16 + 11);
  CHECK(vec[16] == doctest::Approx(8.0 / 64.0));   // building fraction
  CHECK(vec[17] == doctest::Approx(2.0 / 100.0));  // component count / 100
  CHECK(vec[18] == doctest::Approx(4.0 / 64.0));   // mean component area
  double hist_sum = 0.0;
  for (std::size_t i = 19; i < vec.size(); ++i) hist_sum += vec[i];
  CHECK(hist_sum == doctest::Approx(8.0 / 64.0));  // area-fraction weighted

  const auto empty = featurize_mask(Mask(8, 8), 4, FeatureMode::pool_stats);
  CHECK(empty[16] == 0.0);
  CHECK(empty[17] == 0.0);
  CHECK(empty[18] == 0.0);
}

TEST_CASE("identity embedding passes features through") {
  const auto features = points_1d({0.0, 1.0}, {5.0, 6.0});
  const auto out = embed(features, EmbedMethod::identity());
  REQUIRE(out.size() == features.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].vec == features[i].vec);
    CHECK(out[i].id == features[i].id);
  }
  CHECK_THROWS_AS((void)embed({features[0]}, EmbedMethod::identity()),
                  std::invalid_argument);
  auto bad = features;
  bad[1].vec.push_back(0.0);
  CHECK_THROWS_AS((void)embed(bad, EmbedMethod::identity()), std::invalid_argument);
}

TEST_CASE("full-rank pca preserves pairwise distances") {
  Rng rng(61);
  std::vector<LabelFeature> features;
  for (int i = 0; i < 12; ++i) {
    std::vector<double> vec(3);
    for (auto& v : vec) v = rng.uniform(-2.0, 2.0);
    features.push_back(feature(std::move(vec), i % 2 ? Origin::target : Origin::source, i));
  }
  const auto out = embed(features, EmbedMethod::pca(3));
  REQUIRE(out.size() == features.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = i + 1; j < out.size(); ++j) {
      double before = 0.0, after = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        before += (features[i].vec[k] - features[j].vec[k]) *
                  (features[i].vec[k] - features[j].vec[k]);
        after += (out[i].vec[k] - out[j].vec[k]) * (out[i].vec[k] - out[j].vec[k]);
      }
      CHECK(std::sqrt(after) == doctest::Approx(std::sqrt(before)).epsilon(1e-6));
    }

  // repeated runs give identical coordinates (deterministic sign convention)
  const auto again = embed(features, EmbedMethod::pca(3));
  for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].vec == again[i].vec);

  CHECK_THROWS_AS((void)embed(features, EmbedMethod::pca(0)), std::invalid_argument);
  CHECK_THROWS_AS((void)embed(features, EmbedMethod::pca(4)), std::invalid_argument);
}

TEST_CASE("pca(1) recovers collinear points up to a shared shift") {
  // points t * (3, -4) for assorted t: one principal direction carries
  // everything, so 1-D distances match the 2-D ones
  const std::vector<double> ts = {-2.0, -0.5, 0.0, 1.0, 2.5, 4.0};
  std::vector<LabelFeature> features;
  for (std::size_t i = 0; i < ts.size(); ++i)
    features.push_back(feature({3.0 * ts[i], -4.0 * ts[i]},
                               i % 2 ? Origin::target : Origin::source,
                               static_cast<int>(i)));
  const auto out = embed(features, EmbedMethod::pca(1));
  for (std::size_t i = 0; i < out.size(); ++i) {
    REQUIRE(out[i].vec.size() == 1);
    for (std::size_t j = i + 1; j < out.size(); ++j) {
      const double expected = 5.0 * std::abs(ts[i] - ts[j]);
      CHECK(std::abs(out[i].vec[0] - out[j].vec[0]) ==
            doctest::Approx(expected).epsilon(1e-6));
    }
  }
}

TEST_CASE("external embedding reads coordinates by id") {
  const auto dir = fs::temp_directory_path() / "geoadapt_labelgap_test";
  fs::create_directories(dir);
  const auto path = dir / "coords.csv";
  {
    std::ofstream out(path);
    out << "id,x1,x2\n2,10.0,0.5\n0,-1.0,2.0\n1,0.0,0.0\n";
  }
  auto features = points_1d({7.0, 7.0}, {7.0});
  const auto out = embed(features, EmbedMethod::external(path));
  REQUIRE(out.size() == 3);
  CHECK(out[0].vec == std::vector<double>{-1.0, 2.0});
  CHECK(out[1].vec == std::vector<double>{0.0, 0.0});
  CHECK(out[2].vec == std::vector<double>{10.0, 0.5});

  features.push_back(feature({7.0}, Origin::target, 9));
  CHECK_THROWS_AS((void)embed(features, EmbedMethod::external(path)),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)embed(features, EmbedMethod::external(dir / "missing.csv")),
                  std::invalid_argument);

  const auto bad_header = dir / "bad.csv";
  {
    std::ofstream out(bad_header);
    out << "x1,x2\n0,1.0,2.0\n";
  }
  CHECK_THROWS_AS((void)embed(features, EmbedMethod::external(bad_header)),
                  std::invalid_argument);
}

TEST_CASE("purity hand examples") {
  SUBCASE("well separated pairs stay pure until the final merge") {
    const auto curve = purity_curve(points_1d({0.0, 1.0}, {10.0, 11.0}));
    REQUIRE(curve.purity.size() == 3);
    CHECK(curve.purity[0] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(curve.purity[1] == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(curve.purity[2] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(curve.auc == doctest::Approx(2.5 / 3.0).epsilon(1e-9));
  }
  SUBCASE("interleaved points lose purity immediately") {
    const auto curve = purity_curve(points_1d({0.0, 2.0}, {1.0, 3.0}));
    REQUIRE(curve.purity.size() == 3);
    CHECK(curve.purity[0] == doctest::Approx(0.75).epsilon(1e-9));
    CHECK(curve.purity[1] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(curve.purity[2] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(curve.auc == doctest::Approx(1.75 / 3.0).epsilon(1e-9));
  }
  SUBCASE("merge fractions climb to exactly 1") {
    const auto curve = purity_curve(points_1d({0.0, 1.0}, {10.0, 11.0}));
    CHECK(curve.merge_fraction == std::vector<double>{1.0 / 3.0, 2.0 / 3.0, 1.0});
  }
}

TEST_CASE("a balanced collection ends at purity one half exactly") {
  Rng rng(71);
  auto features = random_instance(rng, 10, 2);
  int source = 0;
  for (auto& f : features) source += f.origin == Origin::source ? 1 : 0;
  for (auto& f : features) {  // rebalance to 5/5
    if (source > 5 && f.origin == Origin::source) {
      f.origin = Origin::target;
      --source;
    } else if (source < 5 && f.origin == Origin::target) {
      f.origin = Origin::source;
      ++source;
    }
  }
  const auto curve = purity_curve(features);
  CHECK(curve.purity.back() == 0.5);
}

TEST_CASE("purity arrays match the all-pairs single-linkage oracle") {
  Rng rng(81);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 4 + static_cast<int>(rng.uniform_int(27));  // 4..30
    const int d = 1 + static_cast<int>(rng.uniform_int(4));   // 1..4
    const auto features = random_instance(rng, n, d);

    const auto curve = purity_curve(features);
    const auto oracle = all_pairs_purity(features);
    REQUIRE(curve.purity.size() == static_cast<std::size_t>(n - 1));
    REQUIRE(oracle.size() == curve.purity.size());
    for (std::size_t k = 0; k < oracle.size(); ++k)
      CHECK(curve.purity[k] == doctest::Approx(oracle[k]).epsilon(1e-12));

    // bounds: every value sits between the global majority fraction and 1,
    // and the final merge lands on the majority fraction itself
    int source = 0;
    for (const auto& f : features) source += f.origin == Origin::source ? 1 : 0;
    const double floor = static_cast<double>(std::max(source, n - source)) / n;
    for (std::size_t k = 0; k < curve.purity.size(); ++k) {
      CHECK(curve.purity[k] >= floor - 1e-12);
      CHECK(curve.purity[k] <= 1.0 + 1e-12);
      CHECK(curve.merge_fraction[k] ==
            doctest::Approx(static_cast<double>(k + 1) / (n - 1)).epsilon(1e-15));
    }
    CHECK(curve.purity.back() == doctest::Approx(floor).epsilon(1e-12));
  }
}

TEST_CASE("purity is invariant to rescaling the feature space") {
  Rng rng(91);
  const auto base = random_instance(rng, 20, 3);
  const auto reference = purity_curve(base);
  for (double c : {1e-3, 1.0, 1e3}) {
    auto scaled = base;
    for (auto& f : scaled)
      for (auto& v : f.vec) v *= c;
    const auto curve = purity_curve(scaled);
    REQUIRE(curve.purity.size() == reference.purity.size());
    for (std::size_t k = 0; k < curve.purity.size(); ++k)
      CHECK(curve.purity[k] == reference.purity[k]);
    CHECK(curve.auc == reference.auc);
  }
}

TEST_CASE("separated blobs score higher than interleaved draws") {
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(900 + static_cast<std::uint64_t>(trial));
    std::vector<LabelFeature> separated, interleaved;
    for (int i = 0; i < 12; ++i) {
      separated.push_back(feature({rng.normal() * 0.2, rng.normal() * 0.2},
                                  Origin::source, i));
      separated.push_back(feature({8.0 + rng.normal() * 0.2, rng.normal() * 0.2},
                                  Origin::target, 12 + i));
      interleaved.push_back(feature({rng.uniform(), rng.uniform()}, Origin::source, i));
      interleaved.push_back(feature({rng.uniform(), rng.uniform()}, Origin::target, 12 + i));
    }
    CHECK(purity_curve(separated).auc > purity_curve(interleaved).auc);
  }
}

TEST_CASE("purity_curve rejects degenerate inputs") {
  CHECK_THROWS_AS((void)purity_curve({}), std::invalid_argument);
  CHECK_THROWS_AS((void)purity_curve(points_1d({0.0}, {})), std::invalid_argument);
  CHECK_THROWS_AS((void)purity_curve(points_1d({0.0, 1.0, 2.0}, {})),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)purity_curve(points_1d({}, {0.0, 1.0})), std::invalid_argument);
}

TEST_CASE("curve csv lists one row per merge") {
  const auto curve = purity_curve(points_1d({0.0, 1.0}, {10.0, 11.0}));
  CHECK(curve_to_csv(curve) ==
        "merge_fraction,purity\n"
        "0.333333333,1\n"
        "0.666666667,1\n"
        "1,0.5\n");
}

TEST_CASE("gap summary json carries the pair sizes and score") {
  GapResult result;
  result.name = "v2k";
  result.n_source = 6;
  result.n_target = 4;
  result.curve.auc = 0.75;
  const auto doc = nlohmann::json::parse(gap_summary_json(result));
  CHECK(doc.at("pair") == "v2k");
  CHECK(doc.at("n_source") == 6);
  CHECK(doc.at("n_target") == 4);
  CHECK(doc.at("auc").get<double>() == doctest::Approx(0.75));
}

TEST_CASE("compare_gaps ranks the more separable pair first") {
  MaskPair far, close;
  far.name = "separated";
  close.name = "mixed";
  for (int i = 0; i < 6; ++i) {
    far.source.push_back(block_mask(16, 16, 1 + i % 2, 1, 4));
    far.target.push_back(block_mask(16, 16, 10, 10 + i % 2, 4));
    close.source.push_back(block_mask(16, 16, 5 + i % 3, 5, 4));
    close.target.push_back(block_mask(16, 16, 5 + (i + 1) % 3, 5, 4));
  }

  const auto ranked = compare_gaps({close, far}, 4, FeatureMode::pool,
                                   EmbedMethod::identity());
  REQUIRE(ranked.size() == 2);
  CHECK(ranked[0].name == "separated");
  CHECK(ranked[1].name == "mixed");
  CHECK(ranked[0].curve.auc > ranked[1].curve.auc);
  CHECK(ranked[0].n_source == 6);
  CHECK(ranked[0].n_target == 6);
  CHECK(ranked[0].curve.purity.size() == 11);

  const auto lone = compare_gaps({far}, 4, FeatureMode::pool, EmbedMethod::identity());
  REQUIRE(lone.size() == 1);
  CHECK(lone[0].name == "separated");

  CHECK_THROWS_AS((void)compare_gaps({}, 4, FeatureMode::pool, EmbedMethod::identity()),
                  std::invalid_argument);
}
