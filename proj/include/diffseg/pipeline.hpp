// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "diffseg/diffae.hpp"
#include "diffseg/classifier.hpp"
#include "diffseg/manipulate.hpp"
#include "diffseg/maskgen.hpp"
#include "diffseg/phantom.hpp"
#include "diffseg/segnet.hpp"

namespace diffseg::pipeline {

namespace fs = std::filesystem;

struct DiffAEStageConfig {
    diffae::DiffAEConfig model;
    diffae::TrainConfig train;
};

struct SweepStageConfig {
    std::vector<double> alphas = {0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
    int negatives = 32;  // validation negatives edited per candidate
    bool normalize_gradient = true;
    int substeps = 0;    // 0: the DiffAE's own
    int batch_size = 16;
};

struct EvalStageConfig {
    int ablation_pairs = 64;  // phantom twins for the refinement ablation
    int panels = 8;
};

struct PipelineConfig {
    std::uint64_t seed = 7;
    GenerationConfig phantom;
    DiffAEStageConfig diffae;
    classifier::ClassifierConfig classifier;
    SweepStageConfig sweep;
    maskgen::RefineConfig maskgen;
    segnet::SegTrainConfig segnet;
    EvalStageConfig evaluate;

    /// Canonical form; every field is written so the hash covers defaults.
    [[nodiscard]] nlohmann::json to_json() const;
    /// Missing keys keep their defaults; unknown top-level sections are rejected.
    static PipelineConfig from_json(const nlohmann::json& j);
    [[nodiscard]] std::string hash() const;
};

PipelineConfig load_config(const fs::path& path);

/// Desk-scale default and a reduced variant for quick checks.
PipelineConfig default_config();
PipelineConfig smoke_config();

inline const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names = {"phantom",         "diffae_train", "classifier_train",
                                                   "alpha_sweep",     "pair_generation", "maskgen",
                                                   "segnet_train",    "evaluate"};
    return names;
}

struct Artifact {
    std::string path;  // relative to the stage directory
    std::string sha256;
};

struct StageRecord {
    std::string name;
    std::string key;        // content address over config section + upstream keys
    std::string dir;        // stage directory relative to the run root
    std::string status;     // "done" | "skipped (cached)" | "failed"
    std::uint64_t seed = 0;
    std::vector<Artifact> inputs;
    std::vector<Artifact> outputs;
    std::size_t reads = 0;
    std::size_t gt_reads = 0;
    std::string started;
    std::string finished;
    double seconds = 0.0;
    nlohmann::json summary = nlohmann::json::object();
};

struct RunManifest {
    std::string run_id;
    std::string config_hash;
    std::string run_dir;
    std::vector<StageRecord> stages;
    bool complete = false;

    [[nodiscard]] nlohmann::json to_json() const;
    static RunManifest from_json(const nlohmann::json& j);
    /// to_json without wall-clock fields, statuses and the absolute run
    /// directory; equal for two runs of the same config.
    [[nodiscard]] nlohmann::json canonical_json() const;
    [[nodiscard]] const StageRecord* find(const std::string& stage) const;
    /// Directory the stage dirs resolve against.
    [[nodiscard]] fs::path root() const { return fs::path(run_dir).parent_path(); }
    [[nodiscard]] fs::path stage_dir(const std::string& stage) const;
};

struct RunOptions {
    fs::path root = "runs";
    /// Ignore cached stage outputs and recompute everything.
    bool force = false;
};

/// Runs the eight stages in order. Each stage runs under a file-read audit;
/// any ground-truth read outside `evaluate` aborts the run. Failures throw
/// StageError after the manifest is written with the failing stage.
RunManifest run_all(const PipelineConfig& config, const RunOptions& options = {});

RunManifest load_run(const fs::path& run_dir);
/// Resolves a run id (or a path) under `root`.
fs::path resolve_run(const fs::path& root, const std::string& run);

/// Writes report.md next to the manifest and returns its text. Throws
/// InvalidState unless the run finished its evaluate stage.
std::string report(const RunManifest& run);

/// Sum of per-file digests under `dir`, in sorted path order.
std::string tree_checksum(const fs::path& dir);

/// True for paths inside a dataset's ground-truth directory.
bool is_ground_truth_path(const std::string& path);

struct AblationResult {
    std::vector<std::string> ids;
    std::vector<double> refined;
    std::vector<double> raw;
    double mean_refined = 0.0;
    double mean_raw = 0.0;

    [[nodiscard]] nlohmann::json to_json() const;
};

/// Edits each positive away from fibrosis with the pair-generation
/// mechanism (inversion with its own z, decode with the edited z, strength
/// `edit.alpha` against the classifier gradient) and scores refined and
/// raw-Otsu masks of the difference map against the known lesion.
AblationResult refinement_ablation(const diffae::DiffAE& model, const classifier::ClassifierModel& classifier,
                                   const manipulate::ManipulationConfig& edit,
                                   std::span<const ManifestEntry* const> positives, const DatasetManifest& manifest,
                                   const maskgen::RefineConfig& refine);

}  // namespace diffseg::pipeline
