// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string_view>

#include <nlohmann/json.hpp>

namespace diffseg::log {

enum class Level { debug, info, warn, error };

/// Emits one JSON object per line: {"ts", "level", "stage", "msg", ...fields}.
/// Lines go to stderr (unless silenced) and to the current file sink, if any.
void event(Level level, std::string_view stage, std::string_view message,
           const nlohmann::json& fields = nlohmann::json::object());

inline void info(std::string_view stage, std::string_view message,
                 const nlohmann::json& fields = nlohmann::json::object()) {
    event(Level::info, stage, message, fields);
}

void set_min_level(Level level);
void set_stderr_enabled(bool enabled);

/// Appends to `path` while alive; restores the previous sink on destruction.
class FileSink {
public:
    explicit FileSink(const std::filesystem::path& path);
    ~FileSink();
    FileSink(const FileSink&) = delete;
    FileSink& operator=(const FileSink&) = delete;

    struct Impl;

private:
    Impl* impl_;
    Impl* previous_;
};

}  // namespace diffseg::log
