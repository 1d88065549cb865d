#include "geoadapt/geodata.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace geoadapt::geodata {

using json = nlohmann::json;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Bounded entry seeds stay exactly representable in JSON doubles.
constexpr std::uint64_t kSeedMask = 0xffffffffffffull;

void paint(Tensor& img, int y, int x, const std::array<double, 3>& color) {
  for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[static_cast<std::size_t>(c)];
}

struct Building {
  double cy, cx;      // center, pixel coordinates
  double hw, hh;      // half extents
  double theta;       // radians, CCW
  bool lshape;        // rectangle minus its (+u, +v) quadrant
};

bool inside_building(const Building& b, double y, double x) {
  const double dy = y - b.cy, dx = x - b.cx;
  const double ct = std::cos(b.theta), st = std::sin(b.theta);
  const double u = ct * dx + st * dy;
  const double v = -st * dx + ct * dy;
  if (std::abs(u) > b.hw || std::abs(v) > b.hh) return false;
  if (b.lshape && u > 0.0 && v > 0.0) return false;
  return true;
}

std::string tile_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "tile_%06d.png", index);
  return buf;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(std::uint64_t{i})]);
  return order;
}

CityStyle base_style(const std::array<std::array<double, 3>, 3>& palette, double noise,
                     double density, int size_min, int size_max,
                     CityStyle::Orientation mode, double mix, double blur,
                     std::uint64_t seed_base) {
  CityStyle s;
  s.palette = palette;
  s.texture_noise_amp = noise;
  s.building_density = density;
  s.size_min_px = size_min;
  s.size_max_px = size_max;
  s.orientation_mode = mode;
  s.shape_mix = mix;
  s.blur_sigma_px = blur;
  s.rng_seed_base = seed_base;
  return s;
}

CityStyle vegas_style() {
  return base_style({{{0.82, 0.76, 0.65}, {0.58, 0.36, 0.29}, {0.36, 0.34, 0.33}}}, 0.03,
                    6.0, 8, 16, CityStyle::Orientation::grid, 0.25, 0.0, 101);
}

CityStyle khartoum_style() {
  return base_style({{{0.74, 0.66, 0.53}, {0.62, 0.51, 0.38}, {0.55, 0.49, 0.40}}}, 0.08,
                    9.0, 5, 11, CityStyle::Orientation::scattered, 0.45, 0.8, 202);
}

CityStyle paris_style() {
  return base_style({{{0.66, 0.65, 0.62}, {0.47, 0.47, 0.52}, {0.30, 0.30, 0.32}}}, 0.04,
                    7.0, 7, 14, CityStyle::Orientation::grid, 0.5, 0.4, 303);
}

CityStyle shanghai_style() {
  return base_style({{{0.60, 0.62, 0.61}, {0.72, 0.70, 0.66}, {0.27, 0.28, 0.30}}}, 0.06,
                    11.0, 5, 10, CityStyle::Orientation::scattered, 0.3, 0.6, 404);
}

CityStyle on_nadir_style() {
  CityStyle s =
      base_style({{{0.70, 0.67, 0.60}, {0.52, 0.42, 0.36}, {0.33, 0.32, 0.31}}}, 0.05, 7.0,
                 7, 15, CityStyle::Orientation::grid, 0.35, 0.3, 505);
  s.facade_height_px = 6;
  return s;
}

CityStyle very_off_nadir_style() {
  // same city as on_nadir; only the viewing geometry changes
  CityStyle s = on_nadir_style();
  s.shear_angle_deg = 35.0;
  s.blur_sigma_px = 1.2;
  return s;
}

}  // namespace

Sample generate_tile(const CityStyle& style, std::int64_t tile_seed, int size_px) {
  if (size_px < 32) throw std::invalid_argument("generate_tile: size_px must be >= 32");
  if (style.size_min_px > style.size_max_px)
    throw std::invalid_argument("generate_tile: size_range.min > size_range.max");

  Rng rng = substream(style.rng_seed_base,
                      {rng_tag("geodata/tile"), static_cast<std::uint64_t>(tile_seed),
                       static_cast<std::uint64_t>(size_px)});
  const int n = size_px;

  Tensor img({n, n, 3});
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) paint(img, y, x, style.palette[0]);

  // roads first so buildings overprint them
  const int n_roads = 1 + static_cast<int>(rng.uniform_int(std::uint64_t{3}));
  for (int r = 0; r < n_roads; ++r) {
    const bool vertical = rng.bernoulli(0.5);
    const int pos = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(n)));
    const int width = 2 + static_cast<int>(rng.uniform_int(std::uint64_t{2}));
    for (int t = pos; t < std::min(n, pos + width); ++t)
      for (int s = 0; s < n; ++s)
        vertical ? paint(img, s, t, style.palette[2]) : paint(img, t, s, style.palette[2]);
  }

  const int count = rng.poisson(style.building_density);
  std::vector<Building> buildings;
  buildings.reserve(static_cast<std::size_t>(count));
  const int pitch = style.size_max_px + 4;
  const int cells = std::max(1, n / pitch);
  for (int i = 0; i < count; ++i) {
    Building b;
    b.hw = static_cast<double>(rng.uniform_int(style.size_min_px, style.size_max_px)) / 2.0;
    b.hh = static_cast<double>(rng.uniform_int(style.size_min_px, style.size_max_px)) / 2.0;
    b.lshape = rng.bernoulli(style.shape_mix);
    if (style.orientation_mode == CityStyle::Orientation::grid) {
      const auto cell_x = rng.uniform_int(static_cast<std::uint64_t>(cells));
      const auto cell_y = rng.uniform_int(static_cast<std::uint64_t>(cells));
      b.cx = (static_cast<double>(cell_x) + 0.5) * pitch +
             static_cast<double>(rng.uniform_int(std::int64_t{-3}, std::int64_t{3}));
      b.cy = (static_cast<double>(cell_y) + 0.5) * pitch +
             static_cast<double>(rng.uniform_int(std::int64_t{-3}, std::int64_t{3}));
      b.theta = 0.0;
    } else {
      b.cx = rng.uniform(0.0, n);
      b.cy = rng.uniform(0.0, n);
      b.theta = rng.uniform(0.0, kPi);
    }
    buildings.push_back(b);
  }

  // ground footprints are the labels, regardless of viewing geometry
  Mask mask(n, n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      for (const auto& b : buildings)
        if (inside_building(b, y, x)) {
          mask.at(y, x) = 1;
          break;
        }

  const int disp = static_cast<int>(
      std::lround(style.facade_height_px * std::tan(style.shear_angle_deg * kPi / 180.0)));

  // roofs are the footprints displaced horizontally; facades fill the gap
  const std::array<double, 3> facade_color{0.55 * style.palette[1][0],
                                           0.55 * style.palette[1][1],
                                           0.55 * style.palette[1][2]};
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const bool roof = x - disp >= 0 && mask.at(y, x - disp) == 1;
      if (roof) {
        paint(img, y, x, style.palette[1]);
        continue;
      }
      for (int d = 1; d < disp; ++d)
        if (x - d >= 0 && mask.at(y, x - d) == 1) {
          paint(img, y, x, facade_color);
          break;
        }
    }

  img = gaussian_blur(img, style.blur_sigma_px);
  if (style.texture_noise_amp > 0.0)
    for (std::size_t i = 0; i < img.size(); ++i)
      img[i] = std::clamp(img[i] + style.texture_noise_amp * (2.0 * rng.uniform() - 1.0),
                          0.0, 1.0);

  return Sample{std::move(img), std::move(mask), DomainTag{}, tile_seed};
}

std::string Manifest::to_json() const {
  json entries_json = json::array();
  for (const auto& e : entries)
    entries_json.push_back(
        {{"image", e.image}, {"mask", e.mask}, {"domain", e.domain}, {"seed", e.seed}});
  const json doc{{"version", version},
                 {"class_count", class_count},
                 {"tile_size", tile_size},
                 {"entries", entries_json}};
  return doc.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text, const std::filesystem::path& root) {
  const json doc = json::parse(text);
  Manifest m;
  m.version = doc.at("version").get<int>();
  if (m.version != 1)
    throw std::invalid_argument("manifest: unsupported version " + std::to_string(m.version));
  m.class_count = doc.at("class_count").get<int>();
  if (m.class_count < 2) throw std::invalid_argument("manifest: class_count must be >= 2");
  m.tile_size = doc.at("tile_size").get<int>();
  m.root = root;
  for (const auto& e : doc.at("entries")) {
    ManifestEntry entry;
    entry.image = e.at("image").get<std::string>();
    entry.mask = e.at("mask").get<std::string>();
    entry.domain = e.at("domain").get<std::string>();
    entry.seed = e.at("seed").get<std::int64_t>();
    m.entries.push_back(std::move(entry));
  }
  return m;
}

Manifest generate_dataset(const CityStyle& style, const DomainTag& domain, int n,
                          std::uint64_t seed, const std::filesystem::path& out_dir,
                          int size_px) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "masks");

  Manifest m;
  m.class_count = 2;
  m.tile_size = size_px;
  m.root = out_dir;
  for (int i = 0; i < n; ++i) {
    Rng stream = substream(seed, {rng_tag("geodata/dataset"), static_cast<std::uint64_t>(i)});
    const auto tile_seed = static_cast<std::int64_t>(stream.next_u64() & kSeedMask);
    const Sample s = generate_tile(style, tile_seed, size_px);
    const std::string name = tile_name(i);
    write_png_rgb8(out_dir / "images" / name, size_px, size_px, quantize_rgb8(s.image));
    write_png_gray8(out_dir / "masks" / name, size_px, size_px, s.mask.v);
    m.entries.push_back({"images/" + name, "masks/" + name, domain.name, tile_seed});
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

Manifest load_manifest(const std::filesystem::path& manifest_path) {
  return Manifest::from_json(read_text_file(manifest_path),
                             manifest_path.has_parent_path() ? manifest_path.parent_path()
                                                             : std::filesystem::path("."));
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& manifest_path) {
  write_text_file(manifest_path, manifest.to_json());
}

Sample load_sample(const Manifest& manifest, std::size_t index) {
  if (index >= manifest.entries.size())
    throw std::out_of_range("load_sample: index out of range");
  const auto& e = manifest.entries[index];
  const auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : manifest.root / fp;
  };
  int h = 0, w = 0;
  const auto rgb = read_png_rgb8(resolve(e.image), &h, &w);
  Sample s;
  s.image = dequantize_rgb8(rgb, h, w);
  int mh = 0, mw = 0;
  Mask mask;
  mask.v = read_png_gray8(resolve(e.mask), &mh, &mw);
  mask.h = mh;
  mask.w = mw;
  if (mh != h || mw != w) throw std::runtime_error("load_sample: image/mask size mismatch");
  for (auto value : mask.v)
    if (value >= manifest.class_count)
      throw std::runtime_error("load_sample: mask value exceeds class_count");
  s.mask = std::move(mask);
  s.domain = DomainTag{e.domain, DomainRole::source};
  s.tile_seed = e.seed;
  return s;
}

Manifest merge_manifests(const std::vector<Manifest>& parts) {
  if (parts.empty()) throw std::invalid_argument("merge_manifests: no manifests");
  Manifest merged;
  merged.class_count = parts.front().class_count;
  merged.tile_size = parts.front().tile_size;
  merged.root = "";
  for (const auto& part : parts) {
    if (part.class_count != merged.class_count || part.tile_size != merged.tile_size)
      throw std::invalid_argument("merge_manifests: class_count/tile_size mismatch");
    for (const auto& e : part.entries) {
      ManifestEntry abs = e;
      const auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return (fp.is_absolute() ? fp : part.root / fp).lexically_normal().string();
      };
      abs.image = resolve(e.image);
      abs.mask = resolve(e.mask);
      merged.entries.push_back(std::move(abs));
    }
  }
  return merged;
}

std::pair<Manifest, Manifest> split(const Manifest& manifest, double train_fraction,
                                    double val_fraction, std::uint64_t seed) {
  if (train_fraction < 0.0 || val_fraction < 0.0)
    throw std::invalid_argument("split: negative fraction");
  if (std::abs(train_fraction + val_fraction - 1.0) > 1e-9)
    throw std::invalid_argument("split: fractions must sum to 1");

  Rng rng = substream(seed, {rng_tag("geodata/split")});
  const auto order = shuffled_indices(manifest.entries.size(), rng);
  const auto n_train = static_cast<std::size_t>(
      std::lround(train_fraction * static_cast<double>(order.size())));

  Manifest train = manifest, val = manifest;
  train.entries.clear();
  val.entries.clear();
  for (std::size_t k = 0; k < order.size(); ++k)
    (k < n_train ? train : val).entries.push_back(manifest.entries[order[k]]);
  return {std::move(train), std::move(val)};
}

BatchIterator::BatchIterator(const Manifest& manifest, int batch_size,
                             std::uint64_t shuffle_seed,
                             std::optional<augment::AugmentationConfig> augmentation)
    : manifest_(&manifest),
      batch_size_(batch_size),
      shuffle_seed_(shuffle_seed),
      augmentation_(std::move(augmentation)) {
  if (manifest.entries.empty()) throw std::invalid_argument("batch_iterator: empty manifest");
  if (batch_size < 1) throw std::invalid_argument("batch_iterator: batch_size must be >= 1");
}

std::size_t BatchIterator::batches_per_epoch() const {
  const std::size_t n = manifest_->entries.size();
  return (n + static_cast<std::size_t>(batch_size_) - 1) /
         static_cast<std::size_t>(batch_size_);
}

std::vector<std::size_t> BatchIterator::epoch_order(std::size_t epoch) const {
  Rng rng = substream(shuffle_seed_, {rng_tag("data/epoch"), epoch});
  return shuffled_indices(manifest_->entries.size(), rng);
}

Batch BatchIterator::batch_at(std::size_t cursor) const {
  const std::size_t n = manifest_->entries.size();
  const std::size_t bpe = batches_per_epoch();
  const std::size_t epoch = cursor / bpe;
  const std::size_t start = (cursor % bpe) * static_cast<std::size_t>(batch_size_);
  const std::size_t count = std::min(static_cast<std::size_t>(batch_size_), n - start);
  const auto order = epoch_order(epoch);

  Batch batch;
  batch.masks.reserve(count);
  batch.domains.reserve(count);
  for (std::size_t j = 0; j < count; ++j) {
    Sample s = load_sample(*manifest_, order[start + j]);
    if (augmentation_) {
      Rng rng = substream(shuffle_seed_, {rng_tag("data/augment"), epoch * n + start + j});
      const auto plan = augment::sample_pipeline(*augmentation_, rng);
      Tensor image;
      Mask mask;
      augment::augment_pair(s.image, s.mask, plan, &image, &mask);
      s.image = std::move(image);
      s.mask = std::move(mask);
    }
    if (j == 0)
      batch.images = Tensor({static_cast<int>(count), s.image.dim(0), s.image.dim(1), 3});
    std::copy(s.image.data(), s.image.data() + s.image.size(),
              batch.images.data() + j * s.image.size());
    batch.masks.push_back(std::move(s.mask));
    batch.domains.push_back(s.domain.name);
  }
  return batch;
}

Batch BatchIterator::next() { return batch_at(cursor_++); }

BenchmarkPreset benchmark_preset(const std::string& name) {
  const auto src = [](const std::string& city, const CityStyle& style) {
    return DomainSpec{DomainTag{city, DomainRole::source}, style};
  };
  const auto tgt = [](const std::string& city, const CityStyle& style) {
    return DomainSpec{DomainTag{city, DomainRole::target}, style};
  };
  if (name == "v2k")
    return {name, {src("vegas", vegas_style())}, tgt("khartoum", khartoum_style())};
  if (name == "vp2k")
    return {name,
            {src("vegas", vegas_style()), src("paris", paris_style())},
            tgt("khartoum", khartoum_style())};
  if (name == "ps2k")
    return {name,
            {src("paris", paris_style()), src("shanghai", shanghai_style())},
            tgt("khartoum", khartoum_style())};
  if (name == "vsp2k")
    return {name,
            {src("vegas", vegas_style()), src("shanghai", shanghai_style()),
             src("paris", paris_style())},
            tgt("khartoum", khartoum_style())};
  if (name == "on2voff")
    return {name,
            {src("on_nadir", on_nadir_style())},
            tgt("very_off_nadir", very_off_nadir_style())};
  throw std::invalid_argument("unknown benchmark preset: " + name);
}

std::vector<std::string> preset_names() {
  return {"v2k", "vp2k", "ps2k", "vsp2k", "on2voff"};
}

}  // namespace geoadapt::geodata
