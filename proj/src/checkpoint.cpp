// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

#include "raindiff/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>

namespace raindiff {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr char kMagic[4] = {'R', 'D', 'I', 'F'};
constexpr std::uint32_t kMaxRank = 8;
const std::array<const char*, 4> kSetNames{"theta_a", "theta_b", "phi_a", "phi_b"};

class Writer {
 public:
  template <typename T>
  void put(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void bytes(std::string_view s) { out_.append(s); }

  void record(const std::string& name, const TensorF& t) {
    put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    bytes(name);
    put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put<std::uint32_t>(static_cast<std::uint32_t>(d));
    out_.append(reinterpret_cast<const char*>(t.ptr()), static_cast<std::size_t>(t.size()) * sizeof(float));
  }

  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string_view bytes(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::pair<std::string, TensorF> record() {
    const auto len = get<std::uint32_t>("record name length");
    std::string name(bytes(len, "record name"));
    const auto rank = get<std::uint32_t>("record rank");
    if (rank > kMaxRank) throw CheckpointError("checkpoint: tensor " + name + " has rank " + std::to_string(rank));
    Shape shape;
    std::uint64_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = get<std::uint32_t>("record dims");
      shape.push_back(static_cast<Index>(d));
      count *= d;
      if (count > remaining() / sizeof(float)) {
        throw CheckpointError("checkpoint: tensor " + name + " declares " + to_string(shape) +
                              " but only " + std::to_string(remaining()) + " bytes remain");
      }
    }
    TensorF t(shape);
    const auto raw = bytes(static_cast<std::size_t>(count) * sizeof(float), "tensor data");
    std::memcpy(t.ptr(), raw.data(), raw.size());
    return {std::move(name), std::move(t)};
  }

  std::size_t remaining() const { return in_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw CheckpointError("checkpoint truncated while reading " + std::string(what) + " at byte " +
                            std::to_string(pos_));
    }
  }

  std::string_view in_;
  std::size_t pos_ = 0;
};

std::map<std::string, Shape> expected_shapes(const ParamSet<float>& reference) {
  std::map<std::string, Shape> out;
  for (const auto& [name, v] : reference.entries()) out.emplace(reference.qualified(name), v.shape());
  return out;
}

}  // namespace

std::string encode_checkpoint(const ModelBundle& models, const TrainState& state) {
  if (state.step != state.adam.steps()) {
    throw CheckpointError("checkpoint: step counter " + std::to_string(state.step) +
                          " disagrees with optimizer steps " + std::to_string(state.adam.steps()));
  }
  Writer w;
  w.bytes(std::string_view(kMagic, 4));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(state.schedule.steps()));
  w.put<double>(state.schedule.beta_start());
  w.put<double>(state.schedule.beta_end());

  std::uint32_t count = 0;
  for (const auto* set : models.sets()) count += static_cast<std::uint32_t>(set->size());
  w.put<std::uint32_t>(count);
  std::map<std::string, Shape> keys;
  for (const auto* set : models.sets()) {
    for (const auto& [name, v] : set->entries()) {
      w.record(set->qualified(name), v.value());
      keys.emplace(set->qualified(name), v.shape());
    }
  }

  const auto& m = state.adam.first();
  const auto& v = state.adam.second();
  const auto check_keys = [&](const Adam::Moments& moments, const char* which) {
    if (moments.size() != keys.size()) {
      throw CheckpointError(std::string("checkpoint: ") + which + " moments cover " +
                            std::to_string(moments.size()) + " of " + std::to_string(keys.size()) +
                            " parameters");
    }
    for (const auto& [key, t] : moments) {
      auto it = keys.find(key);
      if (it == keys.end() || it->second != t.shape()) {
        throw CheckpointError(std::string("checkpoint: ") + which + " moment " + key + " does not match a parameter");
      }
    }
  };
  check_keys(m, "first");
  check_keys(v, "second");
  w.put<std::uint64_t>(state.adam.steps());
  w.put<std::uint32_t>(static_cast<std::uint32_t>(m.size() + v.size()));
  for (const auto& [key, t] : m) w.record("adam.m." + key, t);
  for (const auto& [key, t] : v) w.record("adam.v." + key, t);

  Writer blob;
  for (const Rng* r : state.rng.all()) {
    const std::string s = r->state();
    blob.put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    blob.bytes(s);
  }
  const std::string b = blob.take();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(b.size()));
  w.bytes(b);
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.bytes(4, "magic") != std::string_view(kMagic, 4)) {
    throw CheckpointError("checkpoint: bad magic (not an RDIF file)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  const auto steps = r.get<std::uint32_t>("schedule T");
  const auto beta_start = r.get<double>("schedule beta_start");
  const auto beta_end = r.get<double>("schedule beta_end");

  Checkpoint ck;
  try {
    ck.state.schedule = NoiseSchedule::linear(static_cast<int>(steps), beta_start, beta_end);
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: invalid schedule: ") + e.what());
  }

  const auto count = r.get<std::uint32_t>("tensor count");
  std::map<std::string, std::map<std::string, TensorF>> groups;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = r.record();
    const auto dot = name.find('.');
    const std::string prefix = name.substr(0, dot);
    if (dot == std::string::npos || std::find(kSetNames.begin(), kSetNames.end(), prefix) == kSetNames.end()) {
      throw CheckpointError("checkpoint: tensor " + name + " belongs to no parameter set");
    }
    if (!groups[prefix].emplace(name.substr(dot + 1), std::move(t)).second) {
      throw CheckpointError("checkpoint: duplicate tensor " + name);
    }
  }

  // architecture is implied by the tensor shapes
  const auto& theta = groups["theta_a"];
  const auto width = [&](const char* name) -> int {
    auto it = theta.find(name);
    if (it == theta.end() || it->second.rank() != 4) {
      throw CheckpointError(std::string("checkpoint: missing tensor theta_a.") + name);
    }
    return static_cast<int>(it->second.dim(0));
  };
  const std::array<int, 3> widths{width("in.stem.conv_weight"), width("enc0.down.conv_weight"),
                                  width("enc1.down.conv_weight")};
  int blocks = 0;
  while (theta.count("enc0.res" + std::to_string(blocks) + ".conv1_weight")) ++blocks;

  ModelBundle& m = ck.models;
  m.estimator = estimator_config(widths);
  m.generator = generator_config(widths);
  m.estimator.blocks_per_level = m.generator.blocks_per_level = blocks;
  std::map<std::string, Shape> keys;
  try {
    m.estimator.validate();
    for (auto [set, cfg] : {std::pair{&m.theta_a, &m.estimator}, std::pair{&m.theta_b, &m.estimator},
                            std::pair{&m.phi_a, &m.generator}, std::pair{&m.phi_b, &m.generator}}) {
      const auto expected = expected_shapes(init_unet<float>(*cfg, 0, set->prefix()));
      auto& group = groups[set->prefix()];
      if (group.size() != expected.size()) {
        throw CheckpointError("checkpoint: set " + set->prefix() + " has " + std::to_string(group.size()) +
                              " tensors, architecture needs " + std::to_string(expected.size()));
      }
      for (auto& [name, t] : group) {
        const std::string key = set->qualified(name);
        auto it = expected.find(key);
        if (it == expected.end()) throw CheckpointError("checkpoint: unexpected tensor " + key);
        if (it->second != t.shape()) {
          throw CheckpointError("checkpoint: tensor " + key + " has shape " + to_string(t.shape()) +
                                ", architecture needs " + to_string(it->second));
        }
        keys.emplace(key, t.shape());
        set->add(name, std::move(t));
      }
    }
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("checkpoint: ") + e.what());
  }

  const auto adam_steps = r.get<std::uint64_t>("optimizer steps");
  const auto moments = r.get<std::uint32_t>("moment count");
  if (moments != 2 * keys.size()) {
    throw CheckpointError("checkpoint: " + std::to_string(moments) + " moment records for " +
                          std::to_string(keys.size()) + " parameters");
  }
  for (std::uint32_t i = 0; i < moments; ++i) {
    auto [name, t] = r.record();
    const bool first = name.rfind("adam.m.", 0) == 0;
    if (!first && name.rfind("adam.v.", 0) != 0) throw CheckpointError("checkpoint: unexpected moment record " + name);
    const std::string key = name.substr(7);
    auto it = keys.find(key);
    if (it == keys.end() || it->second != t.shape()) {
      throw CheckpointError("checkpoint: moment " + name + " does not match a parameter");
    }
    auto& target = first ? ck.state.adam.first() : ck.state.adam.second();
    if (!target.emplace(key, std::move(t)).second) throw CheckpointError("checkpoint: duplicate moment " + name);
  }
  if (ck.state.adam.first().size() != keys.size() || ck.state.adam.second().size() != keys.size()) {
    throw CheckpointError("checkpoint: optimizer moments do not cover every parameter");
  }
  ck.state.adam.set_steps(adam_steps);
  ck.state.step = adam_steps;

  const auto blob_len = r.get<std::uint32_t>("rng blob length");
  Reader blob(r.bytes(blob_len, "rng blob"));
  for (Rng* rng : ck.state.rng.all()) {
    const auto len = blob.get<std::uint32_t>("rng state length");
    try {
      rng->set_state(std::string(blob.bytes(len, "rng state")));
    } catch (const CheckpointError&) {
      throw;
    } catch (const std::exception& e) {
      throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
  }
  if (blob.remaining() != 0) throw CheckpointError("checkpoint: trailing bytes in rng blob");
  if (r.remaining() != 0) {
    throw CheckpointError("checkpoint: " + std::to_string(r.remaining()) + " trailing bytes after byte " +
                          std::to_string(r.position()));
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& models,
                     const TrainState& state) {
  const std::string bytes = encode_checkpoint(models, state);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("checkpoint: cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("checkpoint: write to " + tmp.string() + " failed");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace raindiff
