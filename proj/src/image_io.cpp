// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "diffseg/errors.hpp"
#include "diffseg/io.hpp"

namespace diffseg::io {
namespace {

thread_local std::vector<ReadAudit*> g_audits;

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f != nullptr) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) {
        throw IoError(std::string("cannot open ") + path.string());
    }
    return f;
}

// Writes a grayscale PNG; `rows` holds height rows of width samples, each
// `bit_depth` wide (16-bit samples in host order).
void write_png(const fs::path& path, int height, int width, int bit_depth, int color_type,
               const std::vector<std::uint8_t>& bytes, std::size_t row_bytes) {
    FilePtr file = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng: cannot allocate writer");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng: write failed for " + path.string());
    }
    png_init_io(png, file.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                 color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    if (bit_depth == 16) {
        png_set_swap(png);
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(height));
    for (int y = 0; y < height; ++y) {
        rows[static_cast<std::size_t>(y)] =
            const_cast<png_bytep>(bytes.data() + row_bytes * static_cast<std::size_t>(y));
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

struct DecodedGray {
    int height = 0;
    int width = 0;
    int bit_depth = 0;
    std::vector<std::uint8_t> bytes;
};

DecodedGray read_gray_png(const fs::path& path) {
    record_read(path);
    FilePtr file = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (png == nullptr || info == nullptr) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng: cannot allocate reader");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng: read failed for " + path.string());
    }
    png_init_io(png, file.get());
    png_read_info(png, info);
    DecodedGray out;
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.bit_depth = png_get_bit_depth(png, info);
    const int color = png_get_color_type(png, info);
    if (color != PNG_COLOR_TYPE_GRAY || (out.bit_depth != 8 && out.bit_depth != 16)) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("expected 8/16-bit grayscale PNG: " + path.string());
    }
    if (out.bit_depth == 16) {
        png_set_swap(png);
    }
    png_read_update_info(png, info);
    const std::size_t row_bytes = png_get_rowbytes(png, info);
    out.bytes.resize(row_bytes * static_cast<std::size_t>(out.height));
    std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
    for (int y = 0; y < out.height; ++y) {
        rows[static_cast<std::size_t>(y)] = out.bytes.data() + row_bytes * static_cast<std::size_t>(y);
    }
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

}  // namespace

ReadAudit::ReadAudit() { g_audits.push_back(this); }

ReadAudit::~ReadAudit() { std::erase(g_audits, this); }

void record_read(const fs::path& path) {
    const std::string p = fs::weakly_canonical(path).string();
    for (ReadAudit* audit : g_audits) {
        audit->reads_.push_back(p);
    }
}

std::string read_bytes(const fs::path& path) {
    record_read(path);
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string read_text(const fs::path& path) { return read_bytes(path); }

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << text;
    if (!out) {
        throw IoError("short write: " + path.string());
    }
}

nlohmann::json read_json(const fs::path& path) {
    try {
        return nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw IoError("invalid JSON in " + path.string() + ": " + e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& doc) { write_text(path, doc.dump(2) + "\n"); }

std::uint16_t to_u16(float v) noexcept {
    const float c = std::clamp(v, -1.0F, 1.0F);
    return static_cast<std::uint16_t>(std::lround((c + 1.0F) * 0.5F * 65535.0F));
}

float from_u16(std::uint16_t v) noexcept { return static_cast<float>(v) / 65535.0F * 2.0F - 1.0F; }

void write_image_png16(const fs::path& path, const Image& image) {
    std::vector<std::uint8_t> bytes(image.size() * 2);
    for (std::size_t i = 0; i < image.size(); ++i) {
        const std::uint16_t v = to_u16(image[i]);
        std::memcpy(bytes.data() + 2 * i, &v, 2);
    }
    write_png(path, image.height(), image.width(), 16, PNG_COLOR_TYPE_GRAY, bytes,
              static_cast<std::size_t>(image.width()) * 2);
}

Image read_image_png16(const fs::path& path) {
    DecodedGray d = read_gray_png(path);
    if (d.bit_depth != 16) {
        throw IoError("expected 16-bit PNG: " + path.string());
    }
    Image img(d.height, d.width);
    for (std::size_t i = 0; i < img.size(); ++i) {
        std::uint16_t v = 0;
        std::memcpy(&v, d.bytes.data() + 2 * i, 2);
        img[i] = from_u16(v);
    }
    return img;
}

void write_mask_png8(const fs::path& path, const Mask& mask) {
    std::vector<std::uint8_t> bytes(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        bytes[i] = mask[i] != 0 ? 255 : 0;
    }
    write_png(path, mask.height(), mask.width(), 8, PNG_COLOR_TYPE_GRAY, bytes,
              static_cast<std::size_t>(mask.width()));
}

Mask read_mask_png8(const fs::path& path) {
    DecodedGray d = read_gray_png(path);
    if (d.bit_depth != 8) {
        throw IoError("expected 8-bit PNG: " + path.string());
    }
    Mask m(d.height, d.width);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m[i] = d.bytes[i] >= 128 ? 1 : 0;
    }
    return m;
}

void write_rgb_png8(const fs::path& path, int height, int width, const std::vector<std::uint8_t>& rgb) {
    if (rgb.size() != static_cast<std::size_t>(height) * width * 3) {
        throw std::invalid_argument("write_rgb_png8: buffer size mismatch");
    }
    write_png(path, height, width, 8, PNG_COLOR_TYPE_RGB, rgb, static_cast<std::size_t>(width) * 3);
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw IoError("cannot create directory " + dir.string() + (ec ? ": " + ec.message() : ""));
    }
    // Probe writability up front so I/O failures surface at stage entry.
    const fs::path probe = dir / ".write_probe";
    {
        std::ofstream out(probe);
        if (!out) {
            throw IoError("directory not writable: " + dir.string());
        }
    }
    fs::remove(probe, ec);
}

}  // namespace diffseg::io
