#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "geoadapt/eval.hpp"
#include "geoadapt/geodata.hpp"
#include "geoadapt/image.hpp"
#include "geoadapt/models.hpp"
#include "geoadapt/rng.hpp"

using namespace geoadapt;
using namespace geoadapt::eval;
namespace fs = std::filesystem;

namespace {

Mask random_mask(Rng& rng, int h, int w, int class_count) {
  Mask mask(h, w);
  for (auto& v : mask.v) v = static_cast<std::uint8_t>(rng.uniform_int(class_count));
  return mask;
}

geodata::CityStyle plain_style(std::uint64_t seed_base) {
  geodata::CityStyle style;
  style.palette = {{{0.8, 0.78, 0.7}, {0.5, 0.33, 0.3}, {0.32, 0.32, 0.34}}};
  style.building_density = 5.0;
  style.size_min_px = 7;
  style.size_max_px = 12;
  style.shape_mix = 0.3;
  style.rng_seed_base = seed_base;
  return style;
}

geodata::Manifest make_dataset(const std::string& leaf, int n, std::uint64_t seed,
                               double density = 5.0) {
  auto dir = fs::temp_directory_path() / "geoadapt_eval_test" / leaf;
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto style = plain_style(seed + 77);
  style.building_density = density;
  return geodata::generate_dataset(style, {"vegas", geodata::DomainRole::source}, n,
                                   seed, dir, 32);
}

models::Segmenter small_segmenter(std::uint64_t seed) {
  models::SegmenterDescriptor desc;
  desc.encoder_channels = {8, 16, 16, 16};
  desc.decoder_channels = {16, 16, 8};
  desc.init_seed = seed;
  return models::Segmenter::init(desc);
}

MetricsRecord make_record(const std::string& benchmark, const std::string& mode,
                          double iou_building) {
  MetricsRecord r;
  r.benchmark = benchmark;
  r.mode = mode;
  r.seed = 7;
  r.iou_building = iou_building;
  r.iou_background = 0.0;
  r.iterations = 2000;
  return r;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("confusion counts match a per-pixel tally") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const int classes = 2 + static_cast<int>(rng.uniform_int(3));
    const Mask gt = random_mask(rng, 16, 16, classes);
    const Mask pred = random_mask(rng, 16, 16, classes);

    std::map<std::pair<int, int>, std::int64_t> tally;
    for (std::size_t i = 0; i < gt.v.size(); ++i) ++tally[{gt.v[i], pred.v[i]}];

    const Confusion counts = confusion_counts(pred, gt, classes);
    for (int g = 0; g < classes; ++g)
      for (int p = 0; p < classes; ++p) {
        const auto it = tally.find({g, p});
        CHECK(counts.at(g, p) == (it == tally.end() ? 0 : it->second));
      }
    CHECK(counts.total() == 256);
  }
}

TEST_CASE("confusion rejects mismatched shapes and out-of-range classes") {
  Mask a(4, 4), b(4, 5);
  CHECK_THROWS_AS((void)confusion_counts(a, b, 2), std::invalid_argument);
  Mask c(2, 2), d(2, 2);
  c.at(0, 0) = 3;
  CHECK_THROWS_AS((void)confusion_counts(d, c, 2), std::invalid_argument);
}

TEST_CASE("iou hand examples") {
  SUBCASE("identical masks score 1 for every class") {
    Rng rng(5);
    const Mask m = random_mask(rng, 8, 8, 2);
    const auto per_class = per_class_iou(confusion_counts(m, m, 2));
    CHECK(per_class[0] == doctest::Approx(1.0));
    CHECK(per_class[1] == doctest::Approx(1.0));
  }
  SUBCASE("fully swapped masks score 0") {
    Mask gt(4, 4), pred(4, 4);
    for (int i = 0; i < 8; ++i) gt.v[static_cast<std::size_t>(i)] = 1;
    for (int i = 8; i < 16; ++i) pred.v[static_cast<std::size_t>(i)] = 1;
    const auto per_class = per_class_iou(confusion_counts(pred, gt, 2));
    CHECK(per_class[0] == doctest::Approx(0.0));
    CHECK(per_class[1] == doctest::Approx(0.0));
  }
  SUBCASE("two-pixel prediction overlapping two-pixel truth in one pixel scores 1/3") {
    Mask gt(4, 4), pred(4, 4);
    gt.at(0, 0) = 1;
    gt.at(0, 1) = 1;
    pred.at(0, 1) = 1;
    pred.at(0, 2) = 1;
    const double building = iou(confusion_counts(pred, gt, 2), 1);
    CHECK(building == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  }
  SUBCASE("a class absent from both masks scores 1") {
    Mask gt(4, 4), pred(4, 4);
    const auto per_class = per_class_iou(confusion_counts(pred, gt, 2));
    CHECK(per_class[0] == doctest::Approx(1.0));
    CHECK(per_class[1] == doctest::Approx(1.0));
  }
}

TEST_CASE("delta iou reproduces hand-checked adapted minus source-only gaps") {
  // benchmark pairs (adapted, source-only) with their expected gaps
  const struct {
    double adapted, source_only, delta;
  } cases[] = {
      {47.6, 36.6, 11.0},    {13.59, 15.09, -1.50}, {9.95, 17.56, -7.61},
      {26.36, 23.62, 2.74},  {25.05, 30.09, -5.04}, {11.03, 14.77, -3.74},
      {13.59, 15.09, -1.50}, {36.00, 33.81, 2.19},
  };
  for (const auto& c : cases) {
    CHECK(delta_iou(c.adapted, c.source_only) == doctest::Approx(c.delta).epsilon(1e-9));
  }
}

TEST_CASE("predict_mask argmaxes the channel dimension") {
  auto net = small_segmenter(3);
  for (Tensor* p : net.params()) p->fill(0.0);

  Tensor image({32, 32, 3});
  image.fill(0.5);
  // all-zero logits tie, argmax keeps the first class
  Mask pred = predict_mask(net, image);
  CHECK(pred.h == 32);
  CHECK(pred.w == 32);
  for (auto v : pred.v) CHECK(v == 0);

  // a positive bias on the building logit flips every pixel
  net.head.b[1] = 1.0;
  pred = predict_mask(net, image);
  for (auto v : pred.v) CHECK(v == 1);
}

TEST_CASE("dataset_iou equals manual accumulation over the manifest") {
  const auto manifest = make_dataset("accum", 4, 11);
  const auto net = small_segmenter(19);

  Confusion acc(2);
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    const auto sample = geodata::load_sample(manifest, i);
    accumulate_confusion(acc, predict_mask(net, sample.image), sample.mask);
  }
  const auto expected = per_class_iou(acc);
  const auto got = dataset_iou(net, manifest, 2);
  REQUIRE(got.size() == 2);
  CHECK(got[0] == doctest::Approx(expected[0]).epsilon(1e-12));
  CHECK(got[1] == doctest::Approx(expected[1]).epsilon(1e-12));
}

TEST_CASE("dataset_iou pools counts, so duplicating every tile changes nothing") {
  const auto manifest = make_dataset("dup", 3, 23);
  const auto net = small_segmenter(29);

  geodata::Manifest repeated = manifest;
  for (int copy = 1; copy < 10; ++copy)
    repeated.entries.insert(repeated.entries.end(), manifest.entries.begin(),
                            manifest.entries.end());

  const auto once = dataset_iou(net, manifest, 2);
  const auto tenfold = dataset_iou(net, repeated, 2);
  CHECK(once[0] == doctest::Approx(tenfold[0]).epsilon(1e-12));
  CHECK(once[1] == doctest::Approx(tenfold[1]).epsilon(1e-12));

  geodata::Manifest empty = manifest;
  empty.entries.clear();
  CHECK_THROWS_AS((void)dataset_iou(net, empty, 2), std::invalid_argument);
}

TEST_CASE("metrics records round trip through csv and json") {
  MetricsRecord a = make_record("v2k", "advent", 13.59);
  a.iou_background = 88.4;
  a.delta_iou = -1.50;
  MetricsRecord b = make_record("v2k", "source_only", 15.09);

  const auto parsed = records_from_csv(records_to_csv({a, b}));
  REQUIRE(parsed.size() == 2);
  CHECK(parsed[0].benchmark == "v2k");
  CHECK(parsed[0].mode == "advent");
  CHECK(parsed[0].iou_building == doctest::Approx(13.59));
  CHECK(parsed[0].iou_background == doctest::Approx(88.4));
  REQUIRE(parsed[0].delta_iou.has_value());
  CHECK(*parsed[0].delta_iou == doctest::Approx(-1.50));
  CHECK_FALSE(parsed[1].delta_iou.has_value());

  CHECK_THROWS_AS((void)records_from_csv("nope\n"), std::invalid_argument);

  const MetricsRecord c = record_from_json(record_to_json(a));
  CHECK(c.benchmark == a.benchmark);
  CHECK(c.mode == a.mode);
  CHECK(c.seed == a.seed);
  CHECK(c.iou_building == doctest::Approx(a.iou_building));
  REQUIRE(c.delta_iou.has_value());
  CHECK(*c.delta_iou == doctest::Approx(*a.delta_iou));
  CHECK(c.iterations == a.iterations);
  CHECK(c.monitor == a.monitor);
  CHECK_FALSE(record_from_json(record_to_json(b)).delta_iou.has_value());
}

TEST_CASE("render_report lays benchmarks out as columns with a signed gap row") {
  const std::vector<MetricsRecord> records = {
      make_record("v2k", "advent", 13.59),     make_record("v2k", "source_only", 15.09),
      make_record("vp2k", "advent", 9.95),     make_record("vp2k", "source_only", 17.56),
      make_record("ps2k", "advent", 26.36),    make_record("ps2k", "source_only", 23.62),
      make_record("vsp2k", "advent", 25.05),   make_record("vsp2k", "source_only", 30.09),
      make_record("on2voff", "advent", 11.03), make_record("on2voff", "source_only", 14.77),
  };
  const Report report = render_report(records);
  CHECK(report.csv ==
        "row,v2k,vp2k,ps2k,vsp2k,on2voff\n"
        "IoU (ADVENT),13.59,9.95,26.36,25.05,11.03\n"
        "IoU (src-only),15.09,17.56,23.62,30.09,14.77\n"
        "Δ IoU,-1.50,-7.61,+2.74,-5.04,-3.74\n");

  // the three row labels open the three table body lines
  CHECK(report.text.find("IoU (ADVENT)") != std::string::npos);
  CHECK(report.text.find("IoU (src-only)") != std::string::npos);
  CHECK(report.text.find("Δ IoU") != std::string::npos);
}

TEST_CASE("render_report averages repeated runs before differencing") {
  const std::vector<MetricsRecord> records = {
      make_record("v2k", "advent_aug", 35.00),
      make_record("v2k", "advent_aug", 37.00),
      make_record("v2k", "source_only", 33.81),
  };
  const Report report = render_report(records);
  CHECK(report.csv ==
        "row,v2k\n"
        "IoU (ADVENT),36.00\n"
        "IoU (src-only),33.81\n"
        "Δ IoU,+2.19\n");
}

TEST_CASE("render_report leaves unpaired cells blank") {
  const Report lone = render_report({make_record("v2k", "advent", 13.59)});
  CHECK(lone.csv ==
        "row,v2k\n"
        "IoU (ADVENT),13.59\n"
        "IoU (src-only),--\n"
        "Δ IoU,--\n");
  CHECK_THROWS_AS((void)render_report({}), std::invalid_argument);
}

TEST_CASE("report text matches the golden table") {
  const std::vector<MetricsRecord> records = {
      make_record("v2k", "advent", 13.59),     make_record("v2k", "source_only", 15.09),
      make_record("vp2k", "advent", 9.95),     make_record("vp2k", "source_only", 17.56),
      make_record("ps2k", "advent", 26.36),    make_record("ps2k", "source_only", 23.62),
      make_record("vsp2k", "advent", 25.05),   make_record("vsp2k", "source_only", 30.09),
      make_record("on2voff", "advent", 11.03), make_record("on2voff", "source_only", 14.77),
  };
  const std::string golden = read_file(fs::path(GEOADAPT_GOLDEN_DIR) / "report.txt");
  CHECK(render_report(records).text == golden);
}

TEST_CASE("render_predictions writes one panel row per sample") {
  auto style = plain_style(300);
  std::vector<geodata::Sample> samples = {geodata::generate_tile(style, 1, 32),
                                          geodata::generate_tile(style, 2, 32)};
  auto net_a = small_segmenter(31);
  auto net_b = small_segmenter(37);

  const auto dir = fs::temp_directory_path() / "geoadapt_eval_test";
  fs::create_directories(dir);
  const auto out = dir / "panels.png";
  render_predictions({&net_a, &net_b}, samples, out);

  int h = 0, w = 0;
  const auto pixels = read_png_rgb8(out, &h, &w);
  CHECK(h == 2 * 32);          // one row per sample
  CHECK(w == (2 + 2) * 32);    // input, truth, one panel per model
  CHECK(pixels.size() == static_cast<std::size_t>(h) * w * 3);

  // identical inputs render identical bytes
  const auto out2 = dir / "panels2.png";
  render_predictions({&net_a, &net_b}, samples, out2);
  CHECK(read_file(out) == read_file(out2));

  samples.push_back(geodata::generate_tile(style, 3, 64));
  CHECK_THROWS_AS(render_predictions({&net_a}, samples, dir / "bad.png"),
                  std::invalid_argument);
  CHECK_THROWS_AS(render_predictions({&net_a}, {}, dir / "bad.png"),
                  std::invalid_argument);
}

TEST_CASE("a model that predicts the truth renders a panel equal to the truth panel") {
  // zero weights give all-zero logits, and argmax resolves ties to background;
  // on empty-mask tiles that prediction is exact
  auto style = plain_style(301);
  style.building_density = 0.0;
  const std::vector<geodata::Sample> samples = {geodata::generate_tile(style, 1, 32)};
  auto net = small_segmenter(41);
  for (Tensor* p : net.params()) p->fill(0.0);

  const auto dir = fs::temp_directory_path() / "geoadapt_eval_test";
  fs::create_directories(dir);
  const auto out = dir / "perfect.png";
  render_predictions({&net}, samples, out);

  int h = 0, w = 0;
  const auto pixels = read_png_rgb8(out, &h, &w);
  REQUIRE(h == 32);
  REQUIRE(w == 3 * 32);
  const auto pixel_at = [&](int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * w + x) * 3 + static_cast<std::size_t>(c)];
  };
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      for (int c = 0; c < 3; ++c) CHECK(pixel_at(y, 32 + x, c) == pixel_at(y, 64 + x, c));
}
