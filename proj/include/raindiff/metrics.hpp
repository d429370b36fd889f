// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// Full-reference image quality on images in [-1, 1].

#pragma once

#include "raindiff/tensor.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace raindiff {

inline constexpr double kPsnrCap = 100.0;

/// PSNR in dB on the [0, 1] range; identical images give kPsnrCap.
double psnr(const TensorF& a, const TensorF& b);

/// Mean SSIM over valid 11 x 11 Gaussian windows (sigma 1.5) on [0, 1],
/// averaged over channels. Images must be at least 11 x 11.
double ssim(const TensorF& a, const TensorF& b);

struct MetricRow {
  std::string path;
  double psnr_db = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  double mean_psnr() const;
  double mean_ssim() const;
  /// TSV with header, one row per image and a trailing "mean" row.
  void write_tsv(std::ostream& out) const;
};

/// Pairs files by name across the two directories (*.png in `restored`).
MetricReport evaluate_dirs(const std::filesystem::path& restored, const std::filesystem::path& reference);

}  // namespace raindiff
