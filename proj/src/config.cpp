// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/config.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <sstream>
#include <type_traits>

namespace raindiff {

namespace {

using json = nlohmann::ordered_json;

struct TypeMismatch {};

// Strict conversion: no float -> int truncation, no sign changes.
template <typename T>
T as(const json& v) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw TypeMismatch{};
  } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
    if (!v.is_number_unsigned()) throw TypeMismatch{};
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) throw TypeMismatch{};
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw TypeMismatch{};
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw TypeMismatch{};
  }
  return v.get<T>();
}

struct Key {
  std::string name;
  std::function<void(RunConfig&, const json&)> set;
  std::function<json(const RunConfig&)> get;
};

template <typename T, typename Member>
Key field(std::string name, Member member) {
  return {std::move(name),
          [member](RunConfig& c, const json& v) { std::invoke(member, c) = as<T>(v); },
          [member](const RunConfig& c) { return json(static_cast<T>(std::invoke(member, c))); }};
}

template <typename Member>
Key path_field(std::string name, Member member) {
  return {std::move(name),
          [member](RunConfig& c, const json& v) { std::invoke(member, c) = as<std::string>(v); },
          [member](const RunConfig& c) { return json(std::invoke(member, c).string()); }};
}

template <typename Member>
Key optional_field(std::string name, Member member) {
  return {std::move(name),
          [member](RunConfig& c, const json& v) {
            if (v.is_null()) {
              std::invoke(member, c).reset();
            } else {
              std::invoke(member, c) = as<double>(v);
            }
          },
          [member](const RunConfig& c) {
            const auto& o = std::invoke(member, c);
            return o ? json(*o) : json(nullptr);
          }};
}

// Members of nested structs are reached through small accessors.
#define RD_FIELD(T, name, expr) \
  Key { name, [](RunConfig& c, const json& v) { (expr) = as<T>(v); }, \
        [](const RunConfig& c) { return json(static_cast<T>(expr)); } }

const std::vector<Key>& table() {
  static const std::vector<Key> keys = {
      field<int>("schedule.T", &RunConfig::schedule_T),
      optional_field("schedule.beta_start", &RunConfig::beta_start),
      optional_field("schedule.beta_end", &RunConfig::beta_end),
      {"model.widths", [](RunConfig& c, const json& v) { if (!v.is_array() || v.size() != 3) throw TypeMismatch{};
         for (std::size_t i = 0; i < 3; ++i) c.widths[i] = as<int>(v[i]); },
       [](const RunConfig& c) { return json(c.widths); }},
      RD_FIELD(int, "train.resolution", c.train.resolution),
      RD_FIELD(int, "train.batch_size", c.train.batch_size),
      RD_FIELD(std::uint64_t, "train.max_steps", c.train.max_steps),
      RD_FIELD(std::uint64_t, "train.checkpoint_every", c.train.checkpoint_every),
      RD_FIELD(double, "train.lambda_cyc", c.train.lambda_cyc),
      RD_FIELD(bool, "train.stop_grad_conditions", c.train.stop_grad_conditions),
      RD_FIELD(bool, "train.independent_eps_per_term", c.train.independent_eps_per_term),
      field<bool>("train.resume", &RunConfig::resume),
      RD_FIELD(double, "optim.lr", c.train.adam.lr),
      RD_FIELD(double, "optim.beta1", c.train.adam.beta1),
      RD_FIELD(double, "optim.beta2", c.train.adam.beta2),
      RD_FIELD(double, "optim.eps", c.train.adam.eps),
      RD_FIELD(double, "optim.clip_norm", c.train.adam.clip_norm),
      field<Index>("patch.p", &RunConfig::patch_p),
      field<Index>("patch.stride", &RunConfig::patch_stride),
      field<int>("sample.S", &RunConfig::sample_S),
      field<bool>("sample.clamp_x0", &RunConfig::sample_clamp_x0),
      field<std::uint64_t>("seeds.global", &RunConfig::seed_global),
      field<std::uint64_t>("seeds.data", &RunConfig::seed_data),
      field<std::uint64_t>("seeds.noise", &RunConfig::seed_noise),
      path_field("paths.corpus", &RunConfig::corpus_dir),
      path_field("paths.checkpoints", &RunConfig::checkpoint_dir),
      path_field("paths.outputs", &RunConfig::output_dir),
      path_field("paths.checkpoint", &RunConfig::checkpoint),
      RD_FIELD(int, "corpus.n_clean", c.corpus.n_clean),
      RD_FIELD(int, "corpus.n_rainy", c.corpus.n_rainy),
      RD_FIELD(int, "corpus.n_eval", c.corpus.n_eval),
      RD_FIELD(int, "corpus.size", c.corpus.size),
      RD_FIELD(int, "rain.streaks_min", c.corpus.rain.streaks_min),
      RD_FIELD(int, "rain.streaks_max", c.corpus.rain.streaks_max),
      RD_FIELD(double, "rain.angle_min", c.corpus.rain.angle_min),
      RD_FIELD(double, "rain.angle_max", c.corpus.rain.angle_max),
      RD_FIELD(double, "rain.angle_jitter", c.corpus.rain.angle_jitter),
      RD_FIELD(double, "rain.length_min", c.corpus.rain.length_min),
      RD_FIELD(double, "rain.length_max", c.corpus.rain.length_max),
      RD_FIELD(double, "rain.thickness_min", c.corpus.rain.thickness_min),
      RD_FIELD(double, "rain.thickness_max", c.corpus.rain.thickness_max),
      RD_FIELD(double, "rain.intensity_min", c.corpus.rain.intensity_min),
      RD_FIELD(double, "rain.intensity_max", c.corpus.rain.intensity_max),
  };
  return keys;
}

#undef RD_FIELD

void check(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

}  // namespace

NoiseSchedule RunConfig::schedule() const {
  return NoiseSchedule::linear(schedule_T, beta_start.value_or(0.1 / schedule_T), beta_end.value_or(20.0 / schedule_T));
}

std::filesystem::path RunConfig::checkpoint_path() const {
  return checkpoint.empty() ? checkpoint_dir / "latest.ckpt" : checkpoint;
}

RestoreOptions RunConfig::restore_options(std::uint64_t seed, int threads) const {
  RestoreOptions o;
  o.p = patch_p;
  o.stride = patch_stride;
  o.seed = seed;
  o.clamp_x0 = sample_clamp_x0;
  o.fuse.threads = threads;
  return o;
}

void RunConfig::validate() const {
  check(schedule_T >= 1, "schedule.T", "must be at least 1");
  const double b0 = beta_start.value_or(0.1 / schedule_T), b1 = beta_end.value_or(20.0 / schedule_T);
  check(b0 > 0.0 && b0 < 1.0, "schedule.beta_start", "must lie in (0, 1)");
  check(b1 > 0.0 && b1 < 1.0, "schedule.beta_end", "must lie in (0, 1)");
  check(b0 <= b1, "schedule.beta_end", "must not be below schedule.beta_start");
  for (int w : widths) check(w > 0 && w % 8 == 0, "model.widths", "entries must be positive multiples of 8");
  check(train.resolution >= UNetConfig::kSizeMultiple && train.resolution % UNetConfig::kSizeMultiple == 0,
        "train.resolution", "must be a positive multiple of 4");
  check(train.batch_size >= 1, "train.batch_size", "must be at least 1");
  check(train.lambda_cyc >= 0.0, "train.lambda_cyc", "must be non-negative");
  check(train.adam.lr > 0.0, "optim.lr", "must be positive");
  check(train.adam.beta1 >= 0.0 && train.adam.beta1 < 1.0, "optim.beta1", "must lie in [0, 1)");
  check(train.adam.beta2 >= 0.0 && train.adam.beta2 < 1.0, "optim.beta2", "must lie in [0, 1)");
  check(train.adam.eps > 0.0, "optim.eps", "must be positive");
  check(train.adam.clip_norm >= 0.0, "optim.clip_norm", "must be non-negative");
  check(patch_p >= UNetConfig::kSizeMultiple && patch_p % UNetConfig::kSizeMultiple == 0, "patch.p",
        "must be a positive multiple of 4");
  check(patch_stride >= 1 && patch_stride <= patch_p, "patch.stride", "stride must satisfy 1 <= stride <= p");
  check(sample_S >= 1 && sample_S <= schedule_T, "sample.S", "must lie in 1..T");
  check(schedule_T % sample_S == 0, "sample.S", "S divides T is required (T=" + std::to_string(schedule_T) +
                                                    ", S=" + std::to_string(sample_S) + ")");
  check(corpus.n_clean >= 1, "corpus.n_clean", "must be at least 1");
  check(corpus.n_rainy >= 1, "corpus.n_rainy", "must be at least 1");
  check(corpus.n_eval >= 0, "corpus.n_eval", "must be non-negative");
  check(corpus.size >= 4, "corpus.size", "must be at least 4");
  const auto& r = corpus.rain;
  check(r.streaks_min >= 0 && r.streaks_min <= r.streaks_max, "rain.streaks_max", "need 0 <= min <= max");
  check(r.angle_min <= r.angle_max, "rain.angle_max", "need min <= max");
  check(r.angle_jitter >= 0.0, "rain.angle_jitter", "must be non-negative");
  check(r.length_min > 0.0 && r.length_min <= r.length_max, "rain.length_max", "need 0 < min <= max");
  check(r.thickness_min > 0.0 && r.thickness_min <= r.thickness_max, "rain.thickness_max", "need 0 < min <= max");
  check(r.intensity_min >= 0.0 && r.intensity_min <= r.intensity_max, "rain.intensity_max",
        "need 0 <= min <= max");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& k : table()) out.push_back(k.name);
    return out;
  }();
  return names;
}

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  const bool blank = text.find_first_not_of(" \t\r\n") == std::string_view::npos;
  if (!blank) {
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [name, value] : doc.items()) {
      const auto& keys = table();
      const auto it = std::find_if(keys.begin(), keys.end(), [&](const Key& k) { return k.name == name; });
      if (it == keys.end()) throw ConfigError(name + ": unknown config key");
      try {
        it->set(cfg, value);
      } catch (const TypeMismatch&) {
        throw ConfigError(name + ": wrong type for value " + value.dump() + " (default is " +
                          it->get(RunConfig{}).dump() + ")");
      } catch (const json::exception&) {
        throw ConfigError(name + ": wrong type for value " + value.dump());
      }
    }
  }
  cfg.corpus.seed = cfg.seed_data;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string dump_config(const RunConfig& config) {
  json doc = json::object();
  for (const auto& k : table()) doc[k.name] = k.get(config);
  return doc.dump(2);
}

}  // namespace raindiff
