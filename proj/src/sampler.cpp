// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/sampler.hpp"

#include "raindiff/rng.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <string>
#include <thread>

namespace raindiff {

namespace {

std::vector<Index> axis_offsets(Index size, Index p, Index stride) {
  std::vector<Index> out;
  for (Index o = 0; o <= size - p; o += stride) out.push_back(o);
  if (out.back() != size - p) out.push_back(size - p);
  return out;
}

void require_image(const TensorF& img, const char* what) {
  if (img.rank() != 4 || img.dim(0) != 1 || img.dim(1) != 3) {
    throw ShapeError(std::string(what) + ": expected 1 x 3 x H x W, got " + to_string(img.shape()));
  }
}

// B x 3 x p x p stack of the windows at locations[begin, end).
TensorF gather(const TensorF& img, const PatchGrid& grid, std::size_t begin, std::size_t end) {
  const Index p = grid.p, h = img.dim(2), w = img.dim(3);
  TensorF out({static_cast<Index>(end - begin), 3, p, p});
  float* dst = out.ptr();
  for (std::size_t d = begin; d < end; ++d) {
    const auto [top, left] = grid.locations[d];
    for (Index c = 0; c < 3; ++c) {
      for (Index i = 0; i < p; ++i) {
        const float* src = img.ptr() + (c * h + top + i) * w + left;
        dst = std::copy(src, src + p, dst);
      }
    }
  }
  return out;
}

// Largest multiple of the U-Net size granularity not above min(H, W, p).
Index network_patch(const TensorF& img, Index p) {
  const Index side = std::min({img.dim(2), img.dim(3), p});
  const Index rounded = side - side % UNetConfig::kSizeMultiple;
  if (rounded < UNetConfig::kSizeMultiple) {
    throw ShapeError("image " + to_string(img.shape()) + " is too small for the noise estimator");
  }
  return rounded;
}

TensorF run(const ParamSet<float>& theta, const UNetConfig& cfg, const NoiseSchedule& schedule,
            const TensorF& cond, int sampling_steps, const RestoreOptions& options) {
  require_image(cond, "restore");
  RestoreOptions opts = options;
  opts.p = network_patch(cond, options.p);
  opts.stride = std::min(options.stride, opts.p);
  return restore(network_estimator(theta, cfg, schedule), cond, make_plan(schedule.steps(), sampling_steps),
                 schedule, opts);
}

}  // namespace

PatchGrid build_patch_grid(Index height, Index width, Index p, Index stride) {
  if (height < 1 || width < 1 || p < 1) throw std::invalid_argument("build_patch_grid: sizes must be positive");
  if (stride < 1 || stride > p) {
    throw std::invalid_argument("build_patch_grid: stride " + std::to_string(stride) + " must lie in 1.." +
                                std::to_string(p));
  }
  PatchGrid g;
  g.height = height;
  g.width = width;
  g.p = std::min({height, width, p});
  g.stride = std::min(stride, g.p);
  for (Index top : axis_offsets(height, g.p, g.stride)) {
    for (Index left : axis_offsets(width, g.p, g.stride)) g.locations.emplace_back(top, left);
  }
  return g;
}

TensorF coverage(const PatchGrid& grid) {
  TensorF m({1, 1, grid.height, grid.width});
  for (const auto& [top, left] : grid.locations) {
    for (Index i = 0; i < grid.p; ++i) {
      float* row = m.ptr() + (top + i) * grid.width + left;
      for (Index j = 0; j < grid.p; ++j) row[j] += 1.0f;
    }
  }
  return m;
}

TensorF fuse_noise_estimate(const PatchGrid& grid, const PatchEstimator& estimator, const TensorF& x_t,
                            const TensorF& cond, int t, const FuseOptions& options) {
  require_image(x_t, "fuse_noise_estimate");
  require_same_shape(x_t.shape(), cond.shape(), "fuse_noise_estimate");
  const Index h = x_t.dim(2), w = x_t.dim(3), p = grid.p;
  if (grid.height != h || grid.width != w) {
    throw ShapeError("fuse_noise_estimate: grid built for " + std::to_string(grid.height) + " x " +
                     std::to_string(grid.width) + ", image is " + to_string(x_t.shape()));
  }
  const std::size_t chunk = static_cast<std::size_t>(std::max<Index>(1, options.patches_per_batch));
  const std::size_t chunks = (grid.size() + chunk - 1) / chunk;
  std::vector<TensorF> preds(chunks);
  const auto work = [&](std::size_t c) {
    NoGradGuard no_grad;
    const std::size_t begin = c * chunk, end = std::min(grid.size(), begin + chunk);
    preds[c] = estimator(gather(x_t, grid, begin, end), gather(cond, grid, begin, end), t);
    const Shape expected{static_cast<Index>(end - begin), 3, p, p};
    if (preds[c].shape() != expected) {
      throw ShapeError("fuse_noise_estimate: estimator returned " + to_string(preds[c].shape()) +
                       ", expected " + to_string(expected));
    }
  };

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, options.threads)), chunks);
  if (workers <= 1) {
    for (std::size_t c = 0; c < chunks; ++c) work(c);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t k = 0; k < workers; ++k) {
      pool.emplace_back([&, k] {
        try {
          for (std::size_t c; (c = next.fetch_add(1)) < chunks;) work(c);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  // 64-bit accumulation keeps sum(c) / M == c exact
  std::vector<double> omega(static_cast<std::size_t>(3 * h * w), 0.0);
  std::vector<double> count(static_cast<std::size_t>(h * w), 0.0);
  for (std::size_t d = 0; d < grid.size(); ++d) {
    const auto [top, left] = grid.locations[d];
    const float* src = preds[d / chunk].ptr() + static_cast<Index>(d % chunk) * 3 * p * p;
    for (Index c = 0; c < 3; ++c) {
      for (Index i = 0; i < p; ++i) {
        double* dst = omega.data() + (c * h + top + i) * w + left;
        for (Index j = 0; j < p; ++j) dst[j] += src[(c * p + i) * p + j];
      }
    }
    for (Index i = 0; i < p; ++i) {
      double* dst = count.data() + (top + i) * w + left;
      for (Index j = 0; j < p; ++j) dst[j] += 1.0;
    }
  }
  TensorF out(x_t.shape());
  for (Index c = 0; c < 3; ++c) {
    for (Index k = 0; k < h * w; ++k) {
      const double m = count[static_cast<std::size_t>(k)];
      if (m < 1.0) throw std::logic_error("fuse_noise_estimate: grid leaves a pixel uncovered");
      out[c * h * w + k] = static_cast<float>(omega[static_cast<std::size_t>(c * h * w + k)] / m);
    }
  }
  return out;
}

TensorF restore(const PatchEstimator& estimator, const TensorF& cond, const TimestepPlan& plan,
                const NoiseSchedule& schedule, const RestoreOptions& options) {
  require_image(cond, "restore");
  if (plan.total_steps != schedule.steps()) {
    throw std::invalid_argument("restore: plan built for T=" + std::to_string(plan.total_steps) +
                                " but schedule has T=" + std::to_string(schedule.steps()));
  }
  const PatchGrid grid = build_patch_grid(cond.dim(2), cond.dim(3), options.p, options.stride);
  Rng rng(options.seed);
  TensorF x = rng.normal_tensor<float>(cond.shape());
  for (const auto& [t, t_next] : plan.ladder) {
    TensorF eps = fuse_noise_estimate(grid, estimator, x, cond, t, options.fuse);
    if (options.clamp_x0) eps = clamp_noise_estimate(x, t, eps, schedule);
    x = implicit_step(x, t, t_next, eps, schedule);
  }
  if (options.clamp) x.data() = x.data().cwiseMax(-1.0f).cwiseMin(1.0f);
  return x;
}

PatchEstimator network_estimator(const ParamSet<float>& theta, const UNetConfig& cfg,
                                 const NoiseSchedule& schedule) {
  return [theta = &theta, cfg, schedule](const TensorF& x_t, const TensorF& cond, int t) {
    NoGradGuard no_grad;
    const std::vector<int> ts(static_cast<std::size_t>(x_t.dim(0)), t);
    return predict_noise(*theta, cfg, VarF::constant(x_t), VarF::constant(cond), ts, schedule).value();
  };
}

TensorF derain(const ModelBundle& models, const NoiseSchedule& schedule, const TensorF& rainy,
               int sampling_steps, const RestoreOptions& options) {
  return run(models.theta_a, models.estimator, schedule, rainy, sampling_steps, options);
}

TensorF gen_rain(const ModelBundle& models, const NoiseSchedule& schedule, const TensorF& clean,
                 int sampling_steps, const RestoreOptions& options) {
  return run(models.theta_b, models.estimator, schedule, clean, sampling_steps, options);
}

}  // namespace raindiff
