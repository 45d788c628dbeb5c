// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/log.hpp"

#include <chrono>
#include <fstream>
#include <iostream>
#include <mutex>

namespace diffseg::log {

struct FileSink::Impl {
    std::ofstream out;
};

namespace {

std::mutex g_mutex;
Level g_min_level = Level::info;
bool g_stderr = true;
FileSink::Impl* g_sink = nullptr;

const char* level_name(Level l) {
    switch (l) {
        case Level::debug: return "debug";
        case Level::info: return "info";
        case Level::warn: return "warn";
        case Level::error: return "error";
    }
    return "info";
}

}  // namespace

void event(Level level, std::string_view stage, std::string_view message, const nlohmann::json& fields) {
    if (level < g_min_level) {
        return;
    }
    nlohmann::json line = fields.is_object() ? fields : nlohmann::json::object();
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    line["ts"] = std::chrono::duration<double>(now).count();
    line["level"] = level_name(level);
    line["stage"] = stage;
    line["msg"] = message;
    const std::string text = line.dump();
    std::lock_guard lock(g_mutex);
    if (g_stderr) {
        std::cerr << text << '\n';
    }
    if (g_sink != nullptr) {
        g_sink->out << text << '\n';
        g_sink->out.flush();
    }
}

void set_min_level(Level level) { g_min_level = level; }
void set_stderr_enabled(bool enabled) { g_stderr = enabled; }

FileSink::FileSink(const std::filesystem::path& path) : impl_(new Impl), previous_(nullptr) {
    impl_->out.open(path, std::ios::app);
    std::lock_guard lock(g_mutex);
    previous_ = g_sink;
    g_sink = impl_;
}

FileSink::~FileSink() {
    {
        std::lock_guard lock(g_mutex);
        g_sink = previous_;
    }
    delete impl_;
}

}  // namespace diffseg::log
