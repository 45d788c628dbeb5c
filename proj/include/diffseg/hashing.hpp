// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace diffseg {

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

/// Derives a 64-bit seed from a parent seed and a label; stable across runs.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view label);

}  // namespace diffseg
