#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geoadapt/augment.hpp"
#include "geoadapt/image.hpp"
#include "geoadapt/rng.hpp"
#include "geoadapt/tensor.hpp"

namespace geoadapt::geodata {

enum class DomainRole { source, target };

struct DomainTag {
  std::string name;
  DomainRole role = DomainRole::source;
};

/// Rendering recipe for one synthetic city. palette[0] = ground, palette[1]
/// = roof, palette[2] = road; facades render at 0.55 * roof color.
struct CityStyle {
  std::array<std::array<double, 3>, 3> palette;
  double texture_noise_amp = 0.0;   // in [0, 0.5]
  double building_density = 0.0;    // expected buildings per tile
  int size_min_px = 8;
  int size_max_px = 16;
  enum class Orientation { grid, scattered };
  Orientation orientation_mode = Orientation::grid;
  double shape_mix = 0.0;           // fraction of L-shaped buildings
  double shear_angle_deg = 0.0;     // off-nadir tilt, [0, 45]
  int facade_height_px = 0;
  double blur_sigma_px = 0.0;
  std::uint64_t rng_seed_base = 0;
};

struct Sample {
  Tensor image;  // [H,W,3] in [0,1]
  Mask mask;     // class indices, building benchmarks use {0,1}
  DomainTag domain;
  std::int64_t tile_seed = 0;
};

struct ManifestEntry {
  std::string image;  // relative to the manifest's directory
  std::string mask;
  std::string domain;
  std::int64_t seed = 0;
};

struct Manifest {
  int version = 1;
  int class_count = 2;
  int tile_size = 0;
  std::filesystem::path root;  // directory holding the manifest, not serialized
  std::vector<ManifestEntry> entries;

  std::string to_json() const;
  static Manifest from_json(const std::string& text, const std::filesystem::path& root);
};

/// Renders one tile. Pure function of (style, tile_seed, size_px); the mask
/// labels ground footprints, so it is invariant to shear and blur.
Sample generate_tile(const CityStyle& style, std::int64_t tile_seed, int size_px);

/// Writes n tiles plus a manifest.json under out_dir. Deterministic: the
/// same arguments produce byte-identical files.
Manifest generate_dataset(const CityStyle& style, const DomainTag& domain, int n,
                          std::uint64_t seed, const std::filesystem::path& out_dir,
                          int size_px = 128);

Manifest load_manifest(const std::filesystem::path& manifest_path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& manifest_path);

/// Loads one entry's PNG pair back into a sample (image values are the
/// 8-bit quantized grid).
Sample load_sample(const Manifest& manifest, std::size_t index);

/// Pools several manifests into one by resolving entry paths against their
/// own roots. class_count and tile_size must agree.
Manifest merge_manifests(const std::vector<Manifest>& parts);

/// Deterministic shuffle + prefix/suffix split. fractions must be positive
/// and sum to 1.
std::pair<Manifest, Manifest> split(const Manifest& manifest, double train_fraction,
                                    double val_fraction, std::uint64_t seed);

struct Batch {
  Tensor images;            // [B,H,W,3]
  std::vector<Mask> masks;  // B masks
  std::vector<std::string> domains;
};

/// Epoch-seeded batch stream. Each epoch draws a fresh permutation from
/// (shuffle_seed, epoch); the final short batch is emitted. The cursor is
/// the only state, so position k always yields the same batch for fixed
/// seeds regardless of how iteration was interleaved or resumed.
class BatchIterator {
 public:
  BatchIterator(const Manifest& manifest, int batch_size, std::uint64_t shuffle_seed,
                std::optional<augment::AugmentationConfig> augmentation = std::nullopt);

  Batch next();                      // advances, wrapping to the next epoch
  std::size_t batches_per_epoch() const;
  std::size_t epoch() const { return cursor_ / batches_per_epoch(); }
  std::size_t cursor() const { return cursor_; }
  void seek(std::size_t cursor) { cursor_ = cursor; }

 private:
  Batch batch_at(std::size_t cursor) const;
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;

  const Manifest* manifest_;
  int batch_size_;
  std::uint64_t shuffle_seed_;
  std::optional<augment::AugmentationConfig> augmentation_;
  std::size_t cursor_ = 0;
};

struct DomainSpec {
  DomainTag tag;
  CityStyle style;
};

/// One of the benchmark transfer tasks: one or more source cities and a
/// single target city.
struct BenchmarkPreset {
  std::string name;
  std::vector<DomainSpec> sources;
  DomainSpec target;
};

/// Presets: v2k, vp2k, ps2k, vsp2k, on2voff. on2voff's target differs from
/// its source only in shear angle and blur sigma.
BenchmarkPreset benchmark_preset(const std::string& name);
std::vector<std::string> preset_names();

}  // namespace geoadapt::geodata
