// Copyright (c) 2026, The raindiff Authors
// SPDX-License-Identifier: Apache-2.0

// Binary checkpoint format, all integers and reals little-endian:
//
//   "RDIF" | u32 version | u32 T | f64 beta_start | f64 beta_end
//   u32 tensor count | records
//   u64 optimizer steps | u32 moment count | records ("adam.m.<name>", "adam.v.<name>")
//   u32 blob length | blob = 4 x (u32 length | engine state text)
//
// record = u32 name length | name | u32 rank | u32 dims[rank] | f32 data[prod(dims)]

#pragma once

#include "raindiff/models.hpp"
#include "raindiff/trainer.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace raindiff {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ModelBundle models;
  TrainState state;  // adam config and lambda_cyc are not stored; defaults until overridden
};

std::string encode_checkpoint(const ModelBundle& models, const TrainState& state);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelBundle& models,
                     const TrainState& state);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace raindiff
