// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/image.hpp"

namespace diffseg {

enum class Label { fibrosis_negative, fibrosis_positive };

std::string to_string(Label label);
Label label_from_string(const std::string& s);

/// One 2-D slice with its image-level label. gt_mask is present only where
/// pixel truth exists (synthetic positives).
struct Slice {
    std::string id;
    Image pixels;
    Label label = Label::fibrosis_negative;
    Mask lung_mask;
    std::optional<Mask> gt_mask;
};

namespace phantom {

struct PhantomOptions {
    /// Subpleural rim depth as a fraction of the lung's mean radius.
    double rim_fraction = 0.3;
    /// Probability of a smooth, non-fibrotic central abnormality.
    double abnormality_probability = 0.35;
};

/// Deterministic lung phantom: two elliptical lungs with low-frequency
/// parenchymal texture and thin vessels on a dark background. When
/// `fibrotic`, a subpleural honeycomb-like texture is blended into the top
/// fraction of rim pixels ranked by a smooth envelope field; gt_mask marks
/// exactly those pixels. Anatomy and lesion use independent streams, so
/// (seed, fibrotic = false) is the lesion-free twin of (seed, fibrotic = true).
Slice generate_phantom(std::uint64_t seed, int size, bool fibrotic, double severity,
                       const PhantomOptions& options = {});

/// Fraction of rim pixels turned into lesion for a given severity.
double lesion_fraction(double severity) noexcept;

}  // namespace phantom

enum class Split { train, val, test };

std::string to_string(Split split);
Split split_from_string(const std::string& s);

struct ManifestEntry {
    std::string id;
    std::string image;              // paths relative to the manifest directory
    std::string lung;
    std::optional<std::string> gt;  // ground-truth mask, test-time only
    Label label = Label::fibrosis_negative;
    Split split = Split::train;
    std::uint64_t seed = 0;
    double severity = 0.0;
};

struct SplitCounts {
    int positives = 0;
    int negatives = 0;
};

/// Dataset bookkeeping. Loader-agnostic: any source that can produce images,
/// lung masks and labels in this layout can be described by it.
struct DatasetManifest {
    std::string version = "1";
    std::uint64_t seed = 0;
    int size = 64;
    double train_fraction = 0.0;
    double val_fraction = 0.0;
    double test_fraction = 0.0;
    std::vector<ManifestEntry> entries;
    std::filesystem::path root;  // directory the relative paths resolve against; not serialised

    [[nodiscard]] SplitCounts counts(Split split) const;
    [[nodiscard]] std::vector<const ManifestEntry*> select(Split split) const;
    [[nodiscard]] std::vector<const ManifestEntry*> select(Split split, Label label) const;
    [[nodiscard]] const ManifestEntry& find(const std::string& id) const;

    [[nodiscard]] nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j);
};

struct GenerationConfig {
    int positives = 400;
    int negatives = 400;
    std::uint64_t seed = 7;
    int size = 64;
    double test_fraction = 0.2;  // of positives
    double val_fraction = 0.2;   // of the remaining pool, per class (4:1)
    double severity_min = 0.2;
    double severity_max = 0.9;
    phantom::PhantomOptions phantom;
};

/// Generates every slice, writes images/, lungs/, gt/ and manifest.json under
/// `out_dir`, and returns the manifest.
DatasetManifest build_dataset(const GenerationConfig& config, const std::filesystem::path& out_dir);

/// Loads manifest.json (a file or its directory).
DatasetManifest load_manifest(const std::filesystem::path& path);

/// Reads a slice's image and lung mask; never touches the gt file.
Slice load_slice(const DatasetManifest& manifest, const ManifestEntry& entry);
/// Reads the ground-truth mask. Only evaluation code may call this.
Mask load_ground_truth(const DatasetManifest& manifest, const ManifestEntry& entry);

}  // namespace diffseg
