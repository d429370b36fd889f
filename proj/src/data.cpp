// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace raindiff {

float from_pixel(std::uint8_t v) { return static_cast<float>(static_cast<double>(v) / 127.5 - 1.0); }

std::uint8_t to_pixel(float v) {
  const double scaled = std::floor((static_cast<double>(v) + 1.0) * 127.5 + 0.5);
  return static_cast<std::uint8_t>(std::clamp(scaled, 0.0, 255.0));
}

TensorF load_image(const fs::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw std::runtime_error("cannot read PNG " + path.string() + ": " + image.message);
  }
  if (image.format != PNG_FORMAT_RGB) {
    png_image_free(&image);
    throw std::runtime_error("unsupported PNG " + path.string() +
                             ": need 8-bit RGB without alpha or palette (convert with e.g. "
                             "`convert in.png -alpha off -depth 8 -type TrueColor PNG24:out.png`)");
  }
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    throw std::runtime_error("cannot decode PNG " + path.string() + ": " + image.message);
  }
  const Index h = image.height, w = image.width;
  TensorF out({1, 3, h, w});
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c) out[(c * h + y) * w + x] = from_pixel(buffer[static_cast<std::size_t>((y * w + x) * 3 + c)]);
    }
  }
  return out;
}

void save_image(const TensorF& img, const fs::path& path) {
  if (img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != 3) {
    throw ShapeError("save_image: expected 1 x 3 x H x W, got " + to_string(img.shape()));
  }
  const Index h = img.dim(2), w = img.dim(3);
  std::vector<std::uint8_t> buffer(static_cast<std::size_t>(h * w * 3));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c) buffer[static_cast<std::size_t>((y * w + x) * 3 + c)] = to_pixel(img[(c * h + y) * w + x]);
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, buffer.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG " + path.string() + ": " + image.message);
  }
}

TensorF quantize(const TensorF& img) {
  TensorF out(img.shape());
  for (Index i = 0; i < img.size(); ++i) out[i] = from_pixel(to_pixel(img[i]));
  return out;
}

namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

// Soft coverage of a shape edge at signed distance d (negative inside).
double edge(double d) { return std::clamp(0.5 - d, 0.0, 1.0); }

}  // namespace

TensorF synth_clean(Index size, std::uint64_t seed) {
  Rng rng(seed);
  TensorF img({1, 3, size, size});
  const Index plane = size * size;
  std::array<double, 3> c0, c1;
  for (auto& c : c0) c = uniform(rng, -0.9, 0.4);
  for (auto& c : c1) c = uniform(rng, -0.9, 0.4);
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double dx = std::cos(angle), dy = std::sin(angle);
  for (Index y = 0; y < size; ++y) {
    for (Index x = 0; x < size; ++x) {
      const double u = ((x - size / 2.0) * dx + (y - size / 2.0) * dy) / size + 0.5;
      const double s = std::clamp(u, 0.0, 1.0);
      for (Index c = 0; c < 3; ++c) img[c * plane + y * size + x] = static_cast<float>(c0[c] + (c1[c] - c0[c]) * s);
    }
  }
  const int shapes = static_cast<int>(rng.uniform_int(2, 4));
  for (int k = 0; k < shapes; ++k) {
    std::array<double, 3> col;
    for (auto& c : col) c = uniform(rng, -0.9, 0.5);
    const bool disc = rng.bernoulli(0.5);
    const double cx = uniform(rng, 0.0, size), cy = uniform(rng, 0.0, size);
    const double a = uniform(rng, size / 10.0, size / 4.0), b = uniform(rng, size / 10.0, size / 4.0);
    for (Index y = 0; y < size; ++y) {
      for (Index x = 0; x < size; ++x) {
        const double px = x + 0.5 - cx, py = y + 0.5 - cy;
        const double d = disc ? std::hypot(px, py) - a : std::max(std::abs(px) - a, std::abs(py) - b);
        const double cov = edge(d);
        if (cov <= 0.0) continue;
        for (Index c = 0; c < 3; ++c) {
          float& v = img[c * plane + y * size + x];
          v = static_cast<float>(v * (1.0 - cov) + col[c] * cov);
        }
      }
    }
  }
  return img;
}

TensorF synth_rain_layer(Index size, const RainSynthesisConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  TensorF layer({1, 3, size, size});
  const Index plane = size * size;
  const int count = cfg.streaks_max > 0 ? static_cast<int>(rng.uniform_int(cfg.streaks_min, cfg.streaks_max)) : 0;
  const double base = uniform(rng, cfg.angle_min, cfg.angle_max);
  for (int k = 0; k < count; ++k) {
    const double angle = (base + uniform(rng, -cfg.angle_jitter, cfg.angle_jitter)) * std::numbers::pi / 180.0;
    const double len = uniform(rng, cfg.length_min, cfg.length_max);
    const double thick = uniform(rng, cfg.thickness_min, cfg.thickness_max);
    const double strength = uniform(rng, cfg.intensity_min, cfg.intensity_max);
    const double cx = uniform(rng, 0.0, size), cy = uniform(rng, 0.0, size);
    const double ux = std::sin(angle), uy = std::cos(angle);
    const double x0 = cx - ux * len / 2, y0 = cy - uy * len / 2;
    const Index lo_x = std::max<Index>(0, static_cast<Index>(std::floor(std::min(x0, x0 + ux * len) - thick)));
    const Index hi_x = std::min<Index>(size - 1, static_cast<Index>(std::ceil(std::max(x0, x0 + ux * len) + thick)));
    const Index lo_y = std::max<Index>(0, static_cast<Index>(std::floor(std::min(y0, y0 + uy * len) - thick)));
    const Index hi_y = std::min<Index>(size - 1, static_cast<Index>(std::ceil(std::max(y0, y0 + uy * len) + thick)));
    for (Index y = lo_y; y <= hi_y; ++y) {
      for (Index x = lo_x; x <= hi_x; ++x) {
        const double px = x + 0.5 - x0, py = y + 0.5 - y0;
        const double along = std::clamp(px * ux + py * uy, 0.0, len);
        const double dist = std::hypot(px - along * ux, py - along * uy);
        const double cov = edge(dist - thick / 2.0);
        if (cov <= 0.0) continue;
        for (Index c = 0; c < 3; ++c) {
          float& v = layer[c * plane + y * size + x];
          v = std::max(v, static_cast<float>(strength * cov));
        }
      }
    }
  }
  return layer;
}

TensorF add_rain(const TensorF& clean, const TensorF& layer) {
  require_same_shape(clean.shape(), layer.shape(), "add_rain");
  TensorF out(clean.shape());
  out.data() = (clean.data() + layer.data()).cwiseMax(-1.0f).cwiseMin(1.0f);
  return out;
}

namespace {

enum : std::uint64_t { kCleanTag = 1, kRainyBaseTag = 2, kRainTag = 3, kEvalBaseTag = 4, kEvalRainTag = 5 };

std::string numbered(const char* dir, const char* stem, int i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s/%s_%04d.png", dir, stem, i);
  return buf;
}

}  // namespace

std::vector<ManifestEntry> synth_corpus(const CorpusConfig& cfg, const fs::path& out_dir) {
  if (cfg.n_clean < 1 || cfg.n_rainy < 1 || cfg.n_eval < 0) {
    throw std::invalid_argument("synth_corpus: need at least one clean and one rainy image");
  }
  const auto seed_of = [&](std::uint64_t tag, int i) { return mix_seed(mix_seed(cfg.seed, tag), static_cast<std::uint64_t>(i)); };
  std::vector<ManifestEntry> manifest;
  for (int i = 0; i < cfg.n_clean; ++i) {
    const auto s = seed_of(kCleanTag, i);
    manifest.push_back({numbered("clean", "clean", i), "clean", s});
    save_image(synth_clean(cfg.size, s), out_dir / manifest.back().path);
  }
  for (int i = 0; i < cfg.n_rainy; ++i) {
    const auto s = seed_of(kRainyBaseTag, i);
    manifest.push_back({numbered("rainy", "rainy", i), "rainy", s});
    const TensorF rainy = add_rain(synth_clean(cfg.size, s), synth_rain_layer(cfg.size, cfg.rain, seed_of(kRainTag, i)));
    save_image(rainy, out_dir / manifest.back().path);
  }
  for (int i = 0; i < cfg.n_eval; ++i) {
    const auto s = seed_of(kEvalBaseTag, i);
    const TensorF clean = synth_clean(cfg.size, s);
    manifest.push_back({numbered("eval", "clean", i), "eval_clean", s});
    save_image(clean, out_dir / manifest.back().path);
    manifest.push_back({numbered("eval", "rainy", i), "eval_rainy", s});
    save_image(add_rain(clean, synth_rain_layer(cfg.size, cfg.rain, seed_of(kEvalRainTag, i))),
               out_dir / manifest.back().path);
  }
  std::ofstream out(out_dir / kManifestName, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + (out_dir / kManifestName).string());
  out << "path\trole\tseed\n";
  for (const auto& e : manifest) out << e.path << '\t' << e.role << '\t' << e.seed << '\n';
  if (!out) throw std::runtime_error("write failed for " + (out_dir / kManifestName).string());
  return manifest;
}

std::vector<ManifestEntry> read_manifest(const fs::path& corpus_dir) {
  std::ifstream in(corpus_dir / kManifestName);
  if (!in) throw std::runtime_error("cannot open " + (corpus_dir / kManifestName).string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::getline(in, line);
  if (line != "path\trole\tseed") throw std::runtime_error("manifest: unexpected header '" + line + "'");
  for (int n = 2; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    ManifestEntry e;
    std::string seed;
    if (!std::getline(fields, e.path, '\t') || !std::getline(fields, e.role, '\t') || !std::getline(fields, seed)) {
      throw std::runtime_error("manifest line " + std::to_string(n) + " is malformed");
    }
    if (e.role != "clean" && e.role != "rainy" && e.role != "eval_clean" && e.role != "eval_rainy") {
      throw std::runtime_error("manifest line " + std::to_string(n) + ": unknown role " + e.role);
    }
    e.seed = std::stoull(seed);
    out.push_back(std::move(e));
  }
  return out;
}

UnpairedDataset::UnpairedDataset(std::vector<std::string> clean_paths, std::vector<TensorF> clean,
                                 std::vector<std::string> rainy_paths, std::vector<TensorF> rainy,
                                 DatasetConfig config)
    : clean_paths_(std::move(clean_paths)),
      rainy_paths_(std::move(rainy_paths)),
      clean_(std::move(clean)),
      rainy_(std::move(rainy)),
      config_(config) {
  if (clean_.empty() || rainy_.empty()) throw std::invalid_argument("dataset: clean and rainy lists must be non-empty");
  if (clean_.size() != clean_paths_.size() || rainy_.size() != rainy_paths_.size()) {
    throw std::invalid_argument("dataset: path and image counts differ");
  }
  for (const auto& p : clean_paths_) {
    if (std::find(rainy_paths_.begin(), rainy_paths_.end(), p) != rainy_paths_.end()) {
      throw std::invalid_argument("dataset: " + p + " is listed as both clean and rainy");
    }
  }
  if (config_.resolution < 1) throw std::invalid_argument("dataset: resolution must be positive");
}

UnpairedDataset UnpairedDataset::from_corpus(const fs::path& corpus_dir, const DatasetConfig& config) {
  std::vector<std::string> cp, rp;
  std::vector<TensorF> ci, ri;
  for (const auto& e : read_manifest(corpus_dir)) {
    if (e.role == "clean") {
      cp.push_back(e.path);
      ci.push_back(load_image(corpus_dir / e.path));
    } else if (e.role == "rainy") {
      rp.push_back(e.path);
      ri.push_back(load_image(corpus_dir / e.path));
    }
  }
  return UnpairedDataset(std::move(cp), std::move(ci), std::move(rp), std::move(ri), config);
}

std::size_t UnpairedDataset::draw_index(int list, std::uint64_t k) const {
  const std::size_t n = list == 0 ? clean_.size() : rainy_.size();
  const std::uint64_t epoch = k / n;
  auto key = std::pair{list, epoch};
  auto it = perms_.find(key);
  if (it == perms_.end()) {
    if (perms_.size() > 8) perms_.clear();
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::mt19937_64 engine(mix_seed(mix_seed(config_.seed, static_cast<std::uint64_t>(list)), epoch));
    std::shuffle(perm.begin(), perm.end(), engine);
    it = perms_.emplace(key, std::move(perm)).first;
  }
  return it->second[static_cast<std::size_t>(k % n)];
}

TensorF UnpairedDataset::augment(const TensorF& img, Rng& rng) const {
  const Index r = config_.resolution;
  TensorF out = img;
  if (config_.flip && rng.bernoulli(0.5)) out = flip_horizontal(out);
  Index h = out.dim(2), w = out.dim(3);
  if (h < r || w < r) {
    const double scale = static_cast<double>(r) / static_cast<double>(std::min(h, w));
    out = resize_bilinear(out, std::max(r, static_cast<Index>(std::lround(h * scale))),
                          std::max(r, static_cast<Index>(std::lround(w * scale))));
    h = out.dim(2);
    w = out.dim(3);
  }
  if (h == r && w == r) return out;
  const Index top = rng.uniform_int(0, h - r), left = rng.uniform_int(0, w - r);
  TensorF crop({1, 3, r, r});
  for (Index c = 0; c < 3; ++c) {
    for (Index y = 0; y < r; ++y) {
      for (Index x = 0; x < r; ++x) crop[(c * r + y) * r + x] = out[(c * h + top + y) * w + left + x];
    }
  }
  return crop;
}

std::pair<TensorF, TensorF> UnpairedDataset::next_batch(std::uint64_t step, int batch, Rng& rng) const {
  const Index r = config_.resolution, n = batch, plane = 3 * r * r;
  TensorF x({n, 3, r, r}), y({n, 3, r, r});
  for (Index b = 0; b < n; ++b) {
    const std::uint64_t k = step * static_cast<std::uint64_t>(batch) + static_cast<std::uint64_t>(b);
    const TensorF c = augment(clean_[draw_index(0, k)], rng);
    const TensorF d = augment(rainy_[draw_index(1, k)], rng);
    std::copy(c.ptr(), c.ptr() + plane, x.ptr() + b * plane);
    std::copy(d.ptr(), d.ptr() + plane, y.ptr() + b * plane);
  }
  return {std::move(x), std::move(y)};
}

TensorF resize_bilinear(const TensorF& img, Index height, Index width) {
  const Index h = img.dim(2), w = img.dim(3);
  TensorF out({1, 3, height, width});
  for (Index y = 0; y < height; ++y) {
    const double sy = std::clamp((y + 0.5) * h / height - 0.5, 0.0, static_cast<double>(h - 1));
    const Index y0 = static_cast<Index>(sy), y1 = std::min(y0 + 1, h - 1);
    const double fy = sy - y0;
    for (Index x = 0; x < width; ++x) {
      const double sx = std::clamp((x + 0.5) * w / width - 0.5, 0.0, static_cast<double>(w - 1));
      const Index x0 = static_cast<Index>(sx), x1 = std::min(x0 + 1, w - 1);
      const double fx = sx - x0;
      for (Index c = 0; c < 3; ++c) {
        const float* p = img.ptr() + c * h * w;
        const double top = p[y0 * w + x0] * (1 - fx) + p[y0 * w + x1] * fx;
        const double bot = p[y1 * w + x0] * (1 - fx) + p[y1 * w + x1] * fx;
        out[(c * height + y) * width + x] = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

TensorF flip_horizontal(const TensorF& img) {
  const Index rows = img.dim(0) * img.dim(1) * img.dim(2), w = img.dim(3);
  TensorF out(img.shape());
  for (Index r = 0; r < rows; ++r) std::reverse_copy(img.ptr() + r * w, img.ptr() + (r + 1) * w, out.ptr() + r * w);
  return out;
}

}  // namespace raindiff
