// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/models.hpp"

#include "raindiff/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace raindiff {

void UNetConfig::validate() const {
  if (in_channels < 1 || out_channels < 1) throw std::invalid_argument("unet: channel counts must be >= 1");
  if (blocks_per_level < 0) throw std::invalid_argument("unet: blocks_per_level must be >= 0");
  if (time_dim < 0 || time_dim % 2 != 0) throw std::invalid_argument("unet: time_dim must be even");
  for (int w : widths) {
    if (w < 1 || groups < 1 || w % groups != 0) {
      throw std::invalid_argument("unet: width " + std::to_string(w) + " not divisible by " +
                                  std::to_string(groups) + " groups");
    }
  }
}

UNetConfig estimator_config(std::array<int, 3> widths) {
  UNetConfig cfg;
  cfg.in_channels = 6;
  cfg.widths = widths;
  cfg.time_dim = 128;
  cfg.tanh_output = false;
  return cfg;
}

UNetConfig generator_config(std::array<int, 3> widths) {
  UNetConfig cfg;
  cfg.in_channels = 3;
  cfg.widths = widths;
  cfg.time_dim = 0;
  cfg.tanh_output = true;
  return cfg;
}

template <typename Scalar>
Tensor<Scalar> timestep_embedding(std::span<const int> timesteps, int dim) {
  const Index n = static_cast<Index>(timesteps.size());
  const int half = dim / 2;
  Tensor<Scalar> out({n, dim});
  for (Index i = 0; i < n; ++i) {
    for (int j = 0; j < half; ++j) {
      const double freq = std::exp(-std::log(10000.0) * j / half);
      const double arg = timesteps[static_cast<std::size_t>(i)] * freq;
      out[i * dim + j] = static_cast<Scalar>(std::sin(arg));
      out[i * dim + half + j] = static_cast<Scalar>(std::cos(arg));
    }
  }
  return out;
}

namespace {

std::vector<std::string> level_names(const UNetConfig& cfg) {
  std::vector<std::string> names;
  for (std::size_t l = 0; l < cfg.widths.size(); ++l) names.push_back("enc" + std::to_string(l));
  return names;
}

template <typename Scalar>
class Initializer {
 public:
  Initializer(ParamSet<Scalar>& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  void he(const std::string& name, Shape shape, Index fan_in) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor<Scalar> t(std::move(shape));
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(std * rng_.normal());
    params_.add(name, std::move(t));
  }
  void fill(const std::string& name, Shape shape, Scalar value) {
    params_.add(name, Tensor<Scalar>::constant(std::move(shape), value));
  }

  void conv(const std::string& name, Index co, Index ci, Index k = 3, bool zero = false) {
    if (zero) {
      fill(name + "_weight", {co, ci, k, k}, Scalar(0));
    } else {
      he(name + "_weight", {co, ci, k, k}, ci * k * k);
    }
    fill(name + "_bias", {co}, Scalar(0));
  }
  void norm(const std::string& name, Index c) {
    fill(name + "_gamma", {c}, Scalar(1));
    fill(name + "_beta", {c}, Scalar(0));
  }
  void dense(const std::string& name, Index out, Index in) {
    he(name + "_weight", {out, in}, in);
    fill(name + "_bias", {out}, Scalar(0));
  }

  void res_block(const std::string& block, Index c, int time_dim) {
    norm(block + ".norm1", c);
    conv(block + ".conv1", c, c);
    if (time_dim > 0) dense(block + ".temb", c, time_dim);
    norm(block + ".norm2", c);
    conv(block + ".conv2", c, c, 3, /*zero=*/true);
  }

 private:
  ParamSet<Scalar>& params_;
  Rng rng_;
};

template <typename Scalar>
Var<Scalar> res_block(const ParamSet<Scalar>& p, const UNetConfig& cfg, const std::string& block,
                      const Var<Scalar>& x, const Var<Scalar>* temb, const ForwardOptions& opts) {
  if (opts.bypass.count(block)) return x;
  Var<Scalar> h = group_norm(x, p[block + ".norm1_gamma"], p[block + ".norm1_beta"], cfg.groups);
  h = silu(h);
  h = conv2d(h, p[block + ".conv1_weight"], p[block + ".conv1_bias"]);
  if (temb) h = add_channel_bias(h, linear(*temb, p[block + ".temb_weight"], p[block + ".temb_bias"]));
  h = group_norm(h, p[block + ".norm2_gamma"], p[block + ".norm2_beta"], cfg.groups);
  h = silu(h);
  h = conv2d(h, p[block + ".conv2_weight"], p[block + ".conv2_bias"]);
  return add(x, h);
}

std::string res_name(const std::string& level, int b) { return level + ".res" + std::to_string(b); }

}  // namespace

template <typename Scalar>
ParamSet<Scalar> init_unet(const UNetConfig& cfg, std::uint64_t seed, const std::string& prefix) {
  cfg.validate();
  ParamSet<Scalar> params(prefix);
  Initializer<Scalar> init(params, seed);
  const auto& w = cfg.widths;
  const auto levels = level_names(cfg);

  init.conv("in.stem.conv", w[0], cfg.in_channels);
  if (cfg.time_dim > 0) {
    init.dense("time.mlp.fc1", cfg.time_dim, cfg.time_dim);
    init.dense("time.mlp.fc2", cfg.time_dim, cfg.time_dim);
  }
  for (std::size_t l = 0; l < w.size(); ++l) {
    for (int b = 0; b < cfg.blocks_per_level; ++b) init.res_block(res_name(levels[l], b), w[l], cfg.time_dim);
    if (l + 1 < w.size()) init.conv(levels[l] + ".down.conv", w[l + 1], w[l]);
  }
  for (std::size_t l = w.size() - 1; l-- > 0;) {
    const std::string dec = "dec" + std::to_string(l);
    init.conv(dec + ".merge.conv", w[l], w[l + 1] + w[l]);
    init.res_block(res_name(dec, 0), w[l], cfg.time_dim);
  }
  init.norm("out.head.norm", w[0]);
  init.conv("out.head.conv", cfg.out_channels, w[0]);
  return params;
}

template <typename Scalar>
Var<Scalar> unet_forward(const ParamSet<Scalar>& p, const UNetConfig& cfg, const Var<Scalar>& x,
                         std::span<const int> timesteps, const ForwardOptions& opts) {
  if (x.shape().size() != 4 || x.shape()[1] != cfg.in_channels) {
    throw ShapeError("unet: expected N x " + std::to_string(cfg.in_channels) +
                     " x H x W input, got " + to_string(x.shape()));
  }
  if (x.shape()[2] % UNetConfig::kSizeMultiple != 0 || x.shape()[3] % UNetConfig::kSizeMultiple != 0) {
    throw ShapeError("unet: spatial size must be a multiple of " +
                     std::to_string(UNetConfig::kSizeMultiple) + ", got " + to_string(x.shape()));
  }
  const auto levels = level_names(cfg);
  const auto& w = cfg.widths;

  Var<Scalar> temb;
  if (cfg.time_dim > 0) {
    if (static_cast<Index>(timesteps.size()) != x.shape()[0]) {
      throw ShapeError("unet: " + std::to_string(timesteps.size()) + " timesteps for batch of " +
                       std::to_string(x.shape()[0]));
    }
    Var<Scalar> e = Var<Scalar>::constant(timestep_embedding<Scalar>(timesteps, cfg.time_dim));
    e = silu(linear(e, p["time.mlp.fc1_weight"], p["time.mlp.fc1_bias"]));
    e = linear(e, p["time.mlp.fc2_weight"], p["time.mlp.fc2_bias"]);
    temb = silu(e);
  }
  const Var<Scalar>* tptr = cfg.time_dim > 0 ? &temb : nullptr;

  Var<Scalar> h = conv2d(x, p["in.stem.conv_weight"], p["in.stem.conv_bias"]);
  std::vector<Var<Scalar>> skips;
  for (std::size_t l = 0; l < w.size(); ++l) {
    for (int b = 0; b < cfg.blocks_per_level; ++b) h = res_block(p, cfg, res_name(levels[l], b), h, tptr, opts);
    if (l + 1 < w.size()) {
      skips.push_back(h);
      const std::string down = levels[l] + ".down.conv";
      h = conv2d(h, p[down + "_weight"], p[down + "_bias"], 2, 1);
    }
  }
  for (std::size_t l = w.size() - 1; l-- > 0;) {
    const std::string dec = "dec" + std::to_string(l);
    h = concat_channels(upsample2x(h), skips[l]);
    h = conv2d(h, p[dec + ".merge.conv_weight"], p[dec + ".merge.conv_bias"]);
    h = res_block(p, cfg, res_name(dec, 0), h, tptr, opts);
  }
  h = silu(group_norm(h, p["out.head.norm_gamma"], p["out.head.norm_beta"], cfg.groups));
  h = conv2d(h, p["out.head.conv_weight"], p["out.head.conv_bias"]);
  return cfg.tanh_output ? tanh(h) : h;
}

template <typename Scalar>
Var<Scalar> predict_noise(const ParamSet<Scalar>& params, const UNetConfig& cfg,
                          const Var<Scalar>& x_t, const Var<Scalar>& cond,
                          std::span<const int> timesteps, const NoiseSchedule& schedule,
                          const ForwardOptions& opts) {
  require_same_shape(x_t.shape(), cond.shape(), "predict_noise");
  for (int t : timesteps) (void)schedule.query(t);
  return unet_forward(params, cfg, concat_channels(x_t, cond), timesteps, opts);
}

template <typename Scalar>
Var<Scalar> generate(const ParamSet<Scalar>& params, const UNetConfig& cfg, const Var<Scalar>& img,
                     const ForwardOptions& opts) {
  return unet_forward(params, cfg, img, {}, opts);
}

ModelBundle ModelBundle::initialize(std::array<int, 3> widths, std::uint64_t seed) {
  ModelBundle m;
  m.estimator = estimator_config(widths);
  m.generator = generator_config(widths);
  m.theta_a = init_unet<float>(m.estimator, mix_seed(seed, 1), "theta_a");
  m.theta_b = init_unet<float>(m.estimator, mix_seed(seed, 2), "theta_b");
  m.phi_a = init_unet<float>(m.generator, mix_seed(seed, 3), "phi_a");
  m.phi_b = init_unet<float>(m.generator, mix_seed(seed, 4), "phi_b");
  return m;
}

ModelBundle ModelBundle::clone() const {
  ModelBundle m;
  m.estimator = estimator;
  m.generator = generator;
  m.theta_a = theta_a.clone();
  m.theta_b = theta_b.clone();
  m.phi_a = phi_a.clone();
  m.phi_b = phi_b.clone();
  return m;
}

bool ModelBundle::identical(const ModelBundle& other) const {
  return theta_a.identical(other.theta_a) && theta_b.identical(other.theta_b) &&
         phi_a.identical(other.phi_a) && phi_b.identical(other.phi_b);
}

#define RAINDIFF_INSTANTIATE(Scalar)                                                              \
  template Tensor<Scalar> timestep_embedding<Scalar>(std::span<const int>, int);                 \
  template ParamSet<Scalar> init_unet<Scalar>(const UNetConfig&, std::uint64_t, const std::string&); \
  template Var<Scalar> unet_forward<Scalar>(const ParamSet<Scalar>&, const UNetConfig&,           \
                                            const Var<Scalar>&, std::span<const int>,             \
                                            const ForwardOptions&);                               \
  template Var<Scalar> predict_noise<Scalar>(const ParamSet<Scalar>&, const UNetConfig&,          \
                                             const Var<Scalar>&, const Var<Scalar>&,              \
                                             std::span<const int>, const NoiseSchedule&,          \
                                             const ForwardOptions&);                              \
  template Var<Scalar> generate<Scalar>(const ParamSet<Scalar>&, const UNetConfig&,               \
                                        const Var<Scalar>&, const ForwardOptions&);

RAINDIFF_INSTANTIATE(float)
RAINDIFF_INSTANTIATE(double)

#undef RAINDIFF_INSTANTIATE

}  // namespace raindiff
