// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/image.hpp"

namespace diffseg::io {

namespace fs = std::filesystem;

// Every file read by the library goes through the functions below so that a
// ReadAudit can see it.

/// Records the paths read on this thread while alive. Audits nest; every
/// active audit sees every read.
class ReadAudit {
public:
    ReadAudit();
    ~ReadAudit();
    ReadAudit(const ReadAudit&) = delete;
    ReadAudit& operator=(const ReadAudit&) = delete;

    [[nodiscard]] const std::vector<std::string>& reads() const noexcept { return reads_; }

private:
    friend void record_read(const fs::path& path);
    std::vector<std::string> reads_;
};

void record_read(const fs::path& path);

std::string read_text(const fs::path& path);
void write_text(const fs::path& path, const std::string& text);
std::string read_bytes(const fs::path& path);

nlohmann::json read_json(const fs::path& path);
void write_json(const fs::path& path, const nlohmann::json& doc);

/// 16-bit grayscale PNG, [-1, 1] mapped linearly onto [0, 65535].
void write_image_png16(const fs::path& path, const Image& image);
Image read_image_png16(const fs::path& path);

/// 8-bit grayscale PNG with 0 / 255 samples.
void write_mask_png8(const fs::path& path, const Mask& mask);
Mask read_mask_png8(const fs::path& path);

/// 8-bit RGB PNG; `rgb` holds height * width * 3 bytes.
void write_rgb_png8(const fs::path& path, int height, int width, const std::vector<std::uint8_t>& rgb);

std::uint16_t to_u16(float v) noexcept;
float from_u16(std::uint16_t v) noexcept;

/// Creates the directory (and parents) or throws IoError.
void ensure_dir(const fs::path& dir);

}  // namespace diffseg::io
