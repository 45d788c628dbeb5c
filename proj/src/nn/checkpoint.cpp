// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "diffseg/errors.hpp"
#include "diffseg/io.hpp"

namespace diffseg::nn {
namespace {

constexpr char kMagic[8] = {'D', 'S', 'E', 'G', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian host");

}  // namespace

Checkpoint make_checkpoint(const ParameterSet& params, nlohmann::json meta) {
    Checkpoint ckpt;
    ckpt.header = std::move(meta);
    for (const auto& [name, var] : params.items()) {
        ckpt.arrays.emplace_back(name, var->value);
    }
    return ckpt;
}

std::string serialize(const Checkpoint& ckpt) {
    nlohmann::json header = ckpt.header;
    header["arrays"] = nlohmann::json::array();
    for (const auto& [name, t] : ckpt.arrays) {
        const Shape s = t.shape();
        header["arrays"].push_back({{"name", name}, {"shape", {s.n, s.c, s.h, s.w}}});
    }
    const std::string text = header.dump();
    const std::uint64_t len = text.size();
    std::string out(kMagic, sizeof(kMagic));
    out.append(reinterpret_cast<const char*>(&len), sizeof(len));
    out.append(text);
    for (const auto& item : ckpt.arrays) {
        const Tensor& t = item.second;
        out.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(float));
    }
    return out;
}

Checkpoint deserialize(const std::string& bytes) {
    if (bytes.size() < sizeof(kMagic) + 8 || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw IoError("checkpoint: bad magic");
    }
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + sizeof(kMagic), sizeof(len));
    std::size_t pos = sizeof(kMagic) + sizeof(len);
    if (bytes.size() < pos + len) {
        throw IoError("checkpoint: truncated header");
    }
    Checkpoint ckpt;
    ckpt.header = nlohmann::json::parse(bytes.substr(pos, len));
    pos += len;
    for (const auto& entry : ckpt.header.at("arrays")) {
        const auto shape = entry.at("shape").get<std::vector<int>>();
        if (shape.size() != 4) {
            throw IoError("checkpoint: bad shape rank");
        }
        const Shape s{shape[0], shape[1], shape[2], shape[3]};
        const std::size_t nbytes = s.numel() * sizeof(float);
        if (bytes.size() < pos + nbytes) {
            throw IoError("checkpoint: truncated payload");
        }
        Tensor t(s);
        std::memcpy(t.data(), bytes.data() + pos, nbytes);
        pos += nbytes;
        ckpt.arrays.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    if (pos != bytes.size()) {
        throw IoError("checkpoint: trailing bytes");
    }
    ckpt.header.erase("arrays");
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write checkpoint: " + path.string());
    }
    const std::string bytes = serialize(ckpt);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("short write: " + path.string());
    }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return deserialize(io::read_bytes(path));
}

void load_into(const ParameterSet& params, const Checkpoint& ckpt) {
    for (const auto& [name, var] : params.items()) {
        bool found = false;
        for (const auto& [aname, t] : ckpt.arrays) {
            if (aname != name) {
                continue;
            }
            if (t.shape() != var->value.shape()) {
                throw std::invalid_argument("checkpoint: shape mismatch for " + name);
            }
            var->value = t;
            found = true;
            break;
        }
        if (!found) {
            throw std::invalid_argument("checkpoint: missing parameter " + name);
        }
    }
}

}  // namespace diffseg::nn
