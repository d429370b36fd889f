// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/metrics.hpp"

#include "raindiff/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <stdexcept>

namespace raindiff {

namespace {

void require_pair(const TensorF& a, const TensorF& b, const char* what) {
  require_same_shape(a.shape(), b.shape(), what);
  if (a.rank() != 4) throw ShapeError(std::string(what) + ": expected N x C x H x W, got " + to_string(a.shape()));
}

constexpr int kWin = 11;

std::array<double, kWin> gaussian_window() {
  std::array<double, kWin> g{};
  double sum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    sum += g[static_cast<std::size_t>(i)];
  }
  for (auto& v : g) v /= sum;
  return g;
}

// Valid-mode separable filter of an h x w plane.
std::vector<double> filter(const std::vector<double>& src, Index h, Index w, const std::array<double, kWin>& g) {
  const Index ow = w - kWin + 1, oh = h - kWin + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow), 0.0), out(static_cast<std::size_t>(oh * ow), 0.0);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[static_cast<std::size_t>(k)] * src[static_cast<std::size_t>(y * w + x + k)];
      rows[static_cast<std::size_t>(y * ow + x)] = s;
    }
  }
  for (Index y = 0; y < oh; ++y) {
    for (Index x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int k = 0; k < kWin; ++k) s += g[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>((y + k) * ow + x)];
      out[static_cast<std::size_t>(y * ow + x)] = s;
    }
  }
  return out;
}

}  // namespace

double psnr(const TensorF& a, const TensorF& b) {
  require_pair(a, b, "psnr");
  double se = 0.0;
  for (Index i = 0; i < a.size(); ++i) {
    const double d = (static_cast<double>(a[i]) - b[i]) / 2.0;
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, -10.0 * std::log10(mse));
}

double ssim(const TensorF& a, const TensorF& b) {
  require_pair(a, b, "ssim");
  const Index planes = a.dim(0) * a.dim(1), h = a.dim(2), w = a.dim(3);
  if (h < kWin || w < kWin) {
    throw ShapeError("ssim: images must be at least 11 x 11, got " + to_string(a.shape()));
  }
  const auto g = gaussian_window();
  constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const std::size_t n = static_cast<std::size_t>(h * w);
  double total = 0.0;
  for (Index c = 0; c < planes; ++c) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = (a[c * h * w + static_cast<Index>(i)] + 1.0) / 2.0;
      y[i] = (b[c * h * w + static_cast<Index>(i)] + 1.0) / 2.0;
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = filter(x, h, w, g), my = filter(y, h, w, g);
    const auto sxx = filter(xx, h, w, g), syy = filter(yy, h, w, g), sxy = filter(xy, h, w, g);
    double sum = 0.0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cov = sxy[i] - mx[i] * my[i];
      sum += ((2 * mx[i] * my[i] + c1) * (2 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += sum / static_cast<double>(mx.size());
  }
  return total / static_cast<double>(planes);
}

double MetricReport::mean_psnr() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.psnr_db;
  return s / static_cast<double>(rows.size());
}

double MetricReport::mean_ssim() const {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.ssim;
  return s / static_cast<double>(rows.size());
}

void MetricReport::write_tsv(std::ostream& out) const {
  out << "path\tpsnr_db\tssim\n" << std::fixed;
  for (const auto& r : rows) out << r.path << '\t' << std::setprecision(4) << r.psnr_db << '\t' << std::setprecision(6) << r.ssim << '\n';
  out << "mean\t" << std::setprecision(4) << mean_psnr() << '\t' << std::setprecision(6) << mean_ssim() << '\n';
  out << std::defaultfloat;
}

MetricReport evaluate_dirs(const std::filesystem::path& restored, const std::filesystem::path& reference) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(restored)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  if (files.empty()) throw std::runtime_error("no PNG files in " + restored.string());
  std::sort(files.begin(), files.end());
  MetricReport report;
  for (const auto& f : files) {
    const auto ref_path = reference / f.filename();
    if (!std::filesystem::exists(ref_path)) throw std::runtime_error("no reference for " + f.filename().string());
    const TensorF a = load_image(f), b = load_image(ref_path);
    report.rows.push_back({f.filename().string(), psnr(a, b), ssim(a, b)});
  }
  return report;
}

}  // namespace raindiff
