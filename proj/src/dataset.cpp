// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "diffseg/errors.hpp"
#include "diffseg/hashing.hpp"
#include "diffseg/io.hpp"
#include "diffseg/phantom.hpp"

namespace diffseg {

std::string to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

Split split_from_string(const std::string& s) {
    if (s == "train") {
        return Split::train;
    }
    if (s == "val") {
        return Split::val;
    }
    if (s == "test") {
        return Split::test;
    }
    throw std::invalid_argument("unknown split: " + s);
}

SplitCounts DatasetManifest::counts(Split split) const {
    SplitCounts c;
    for (const auto& e : entries) {
        if (e.split != split) {
            continue;
        }
        (e.label == Label::fibrosis_positive ? c.positives : c.negatives) += 1;
    }
    return c;
}

std::vector<const ManifestEntry*> DatasetManifest::select(Split split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries) {
        if (e.split == split) {
            out.push_back(&e);
        }
    }
    return out;
}

std::vector<const ManifestEntry*> DatasetManifest::select(Split split, Label label) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries) {
        if (e.split == split && e.label == label) {
            out.push_back(&e);
        }
    }
    return out;
}

const ManifestEntry& DatasetManifest::find(const std::string& id) const {
    for (const auto& e : entries) {
        if (e.id == id) {
            return e;
        }
    }
    throw std::invalid_argument("no slice with id " + id);
}

nlohmann::json DatasetManifest::to_json() const {
    nlohmann::json j;
    j["version"] = version;
    j["seed"] = seed;
    j["size"] = size;
    j["split_ratios"] = {{"train", train_fraction}, {"val", val_fraction}, {"test", test_fraction}};
    nlohmann::json counts_json;
    for (Split s : {Split::train, Split::val, Split::test}) {
        const SplitCounts c = counts(s);
        counts_json[to_string(s)] = {{"positives", c.positives}, {"negatives", c.negatives}};
    }
    counts_json["total"] = entries.size();
    j["counts"] = counts_json;
    j["entries"] = nlohmann::json::array();
    for (const auto& e : entries) {
        nlohmann::json je = {{"id", e.id},
                             {"image", e.image},
                             {"lung", e.lung},
                             {"label", to_string(e.label)},
                             {"split", to_string(e.split)},
                             {"seed", e.seed},
                             {"severity", e.severity}};
        if (e.gt) {
            je["gt"] = *e.gt;
        }
        j["entries"].push_back(je);
    }
    return j;
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.version = j.at("version").get<std::string>();
    m.seed = j.value("seed", std::uint64_t{0});
    m.size = j.value("size", 64);
    const auto& r = j.at("split_ratios");
    m.train_fraction = r.at("train").get<double>();
    m.val_fraction = r.at("val").get<double>();
    m.test_fraction = r.at("test").get<double>();
    for (const auto& je : j.at("entries")) {
        ManifestEntry e;
        e.id = je.at("id").get<std::string>();
        e.image = je.at("image").get<std::string>();
        e.lung = je.at("lung").get<std::string>();
        if (je.contains("gt")) {
            e.gt = je.at("gt").get<std::string>();
        }
        e.label = label_from_string(je.at("label").get<std::string>());
        e.split = split_from_string(je.at("split").get<std::string>());
        e.seed = je.value("seed", std::uint64_t{0});
        e.severity = je.value("severity", 0.0);
        m.entries.push_back(std::move(e));
    }
    return m;
}

DatasetManifest build_dataset(const GenerationConfig& config, const std::filesystem::path& out_dir) {
    if (config.positives < 10 || config.negatives < 10) {
        throw std::invalid_argument("build_dataset: need at least 10 slices per class");
    }
    if (config.size < 32) {
        throw std::invalid_argument("build_dataset: size must be >= 32");
    }
    io::ensure_dir(out_dir / "images");
    io::ensure_dir(out_dir / "lungs");
    io::ensure_dir(out_dir / "gt");

    DatasetManifest m;
    m.seed = config.seed;
    m.size = config.size;
    m.root = out_dir;

    std::mt19937_64 split_rng(derive_seed(config.seed, "splits"));
    auto make_ids = [](const char* prefix, int count) {
        std::vector<std::string> ids;
        for (int i = 0; i < count; ++i) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%s_%04d", prefix, i);
            ids.emplace_back(buf);
        }
        return ids;
    };
    std::vector<std::string> pos = make_ids("pos", config.positives);
    std::vector<std::string> neg = make_ids("neg", config.negatives);
    std::shuffle(pos.begin(), pos.end(), split_rng);
    std::shuffle(neg.begin(), neg.end(), split_rng);

    const auto n_test = static_cast<std::size_t>(std::lround(config.test_fraction * config.positives));
    auto assign = [&](const std::vector<std::string>& ids, std::size_t n_test_here) {
        std::vector<std::pair<std::string, Split>> out;
        const std::size_t pool = ids.size() - n_test_here;
        const auto n_val = static_cast<std::size_t>(std::lround(config.val_fraction * static_cast<double>(pool)));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            Split s = Split::train;
            if (i < n_test_here) {
                s = Split::test;
            } else if (i < n_test_here + n_val) {
                s = Split::val;
            }
            out.emplace_back(ids[i], s);
        }
        return out;
    };
    auto tagged = assign(pos, n_test);
    auto tagged_neg = assign(neg, 0);
    tagged.insert(tagged.end(), tagged_neg.begin(), tagged_neg.end());
    std::sort(tagged.begin(), tagged.end());

    for (const auto& [id, split] : tagged) {
        ManifestEntry e;
        e.id = id;
        e.split = split;
        e.seed = derive_seed(config.seed, id);
        const bool positive = id.starts_with("pos");
        e.label = positive ? Label::fibrosis_positive : Label::fibrosis_negative;
        if (positive) {
            std::mt19937_64 sev_rng(derive_seed(e.seed, "severity"));
            e.severity = std::uniform_real_distribution<double>(config.severity_min, config.severity_max)(sev_rng);
        }
        const Slice slice = phantom::generate_phantom(e.seed, config.size, positive, e.severity, config.phantom);
        e.image = "images/" + id + ".png";
        e.lung = "lungs/" + id + ".png";
        io::write_image_png16(out_dir / e.image, slice.pixels);
        io::write_mask_png8(out_dir / e.lung, slice.lung_mask);
        if (slice.gt_mask) {
            e.gt = "gt/" + id + ".png";
            io::write_mask_png8(out_dir / *e.gt, *slice.gt_mask);
        }
        m.entries.push_back(std::move(e));
    }

    const auto total = static_cast<double>(m.entries.size());
    const auto tr = m.select(Split::train).size();
    const auto va = m.select(Split::val).size();
    const auto te = m.select(Split::test).size();
    m.train_fraction = static_cast<double>(tr) / total;
    m.val_fraction = static_cast<double>(va) / total;
    m.test_fraction = static_cast<double>(te) / total;
    io::write_json(out_dir / "manifest.json", m.to_json());
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    const auto file = std::filesystem::is_directory(path) ? path / "manifest.json" : path;
    DatasetManifest m = DatasetManifest::from_json(io::read_json(file));
    m.root = file.parent_path();
    return m;
}

Slice load_slice(const DatasetManifest& manifest, const ManifestEntry& entry) {
    Slice s;
    s.id = entry.id;
    s.label = entry.label;
    s.pixels = io::read_image_png16(manifest.root / entry.image);
    s.lung_mask = io::read_mask_png8(manifest.root / entry.lung);
    return s;
}

Mask load_ground_truth(const DatasetManifest& manifest, const ManifestEntry& entry) {
    if (!entry.gt) {
        throw std::invalid_argument("slice " + entry.id + " has no ground-truth mask");
    }
    return io::read_mask_png8(manifest.root / *entry.gt);
}

}  // namespace diffseg
