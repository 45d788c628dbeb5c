// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/nn/module.hpp"

namespace diffseg::nn {

/// Single-file parameter container:
///   8-byte magic "DSEGCKPT" | u64 LE header length | JSON header | float32 LE arrays
/// The header carries caller metadata plus an "arrays" list of {name, shape}
/// describing the payload in order.
struct Checkpoint {
    nlohmann::json header;
    std::vector<std::pair<std::string, Tensor>> arrays;
};

Checkpoint make_checkpoint(const ParameterSet& params, nlohmann::json meta);
std::string serialize(const Checkpoint& ckpt);
Checkpoint deserialize(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Copies arrays into an already constructed parameter set, matching by name
/// and shape.
void load_into(const ParameterSet& params, const Checkpoint& ckpt);

}  // namespace diffseg::nn
