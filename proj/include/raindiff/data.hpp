// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// PNG I/O, the procedural rain corpus and unpaired batch sampling.

#pragma once

#include "raindiff/rng.hpp"
#include "raindiff/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace raindiff {

namespace fs = std::filesystem;

/// 8-bit value v maps to v / 127.5 - 1.
float from_pixel(std::uint8_t v);
/// Inverse with round-half-up and clamping to 0..255.
std::uint8_t to_pixel(float v);

/// 8-bit RGB PNG -> 1 x 3 x H x W in [-1, 1].
TensorF load_image(const fs::path& path);
/// 1 x 3 x H x W (values clamped) -> 8-bit RGB PNG.
void save_image(const TensorF& img, const fs::path& path);

/// Rounds every value through the 8-bit pixel grid, as a save/load would.
TensorF quantize(const TensorF& img);

struct RainSynthesisConfig {
  int streaks_min = 10;
  int streaks_max = 22;
  double angle_min = -25.0;  // degrees from vertical; one angle per image
  double angle_max = 25.0;
  double angle_jitter = 4.0;  // per-streak deviation
  double length_min = 5.0;
  double length_max = 14.0;
  double thickness_min = 1.0;
  double thickness_max = 2.0;
  double intensity_min = 0.35;  // additive brightness in value-domain units
  double intensity_max = 0.7;
};

/// Structured clean image: smooth two-colour gradient with rectangles and discs.
TensorF synth_clean(Index size, std::uint64_t seed);
/// Non-negative anti-aliased streak layer (1 x 3 x size x size).
TensorF synth_rain_layer(Index size, const RainSynthesisConfig& config, std::uint64_t seed);
/// clamp(clean + layer, -1, 1).
TensorF add_rain(const TensorF& clean, const TensorF& layer);

struct CorpusConfig {
  int n_clean = 200;
  int n_rainy = 200;
  int n_eval = 20;
  int size = 32;
  std::uint64_t seed = 1;
  RainSynthesisConfig rain;
};

struct ManifestEntry {
  std::string path;  // relative to the corpus directory
  std::string role;  // clean | rainy | eval_clean | eval_rainy
  std::uint64_t seed = 0;
};

inline constexpr const char* kManifestName = "manifest.tsv";

/// Writes PNGs plus manifest.tsv. Training rainy images use bases disjoint
/// from the clean set; eval pairs share an index.
std::vector<ManifestEntry> synth_corpus(const CorpusConfig& config, const fs::path& out_dir);

std::vector<ManifestEntry> read_manifest(const fs::path& corpus_dir);

struct DatasetConfig {
  int resolution = 32;
  bool flip = true;
  std::uint64_t seed = 1;  // epoch permutations
};

/// Unpaired clean / rainy training images held in memory.
class UnpairedDataset {
 public:
  UnpairedDataset(std::vector<std::string> clean_paths, std::vector<TensorF> clean,
                  std::vector<std::string> rainy_paths, std::vector<TensorF> rainy, DatasetConfig config);

  /// Loads the clean and rainy roles of a corpus manifest.
  static UnpairedDataset from_corpus(const fs::path& corpus_dir, const DatasetConfig& config);

  /// Draws `batch` clean and `batch` rainy images for training step `step`.
  /// Order is a per-epoch permutation seeded by (seed, epoch); flips and
  /// crop offsets come from `rng`.
  std::pair<TensorF, TensorF> next_batch(std::uint64_t step, int batch, Rng& rng) const;

  /// Image index of the k-th draw from list 0 (clean) or 1 (rainy).
  std::size_t draw_index(int list, std::uint64_t k) const;

  std::size_t clean_size() const { return clean_.size(); }
  std::size_t rainy_size() const { return rainy_.size(); }
  const DatasetConfig& config() const { return config_; }

 private:
  TensorF augment(const TensorF& img, Rng& rng) const;

  std::vector<std::string> clean_paths_, rainy_paths_;
  std::vector<TensorF> clean_, rainy_;
  DatasetConfig config_;
  mutable std::map<std::pair<int, std::uint64_t>, std::vector<std::size_t>> perms_;
};

/// Bilinear resize of a 1 x 3 x H x W image.
TensorF resize_bilinear(const TensorF& img, Index height, Index width);

/// Horizontal mirror.
TensorF flip_horizontal(const TensorF& img);

}  // namespace raindiff
