// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "diffseg/classifier.hpp"
#include "diffseg/diffae.hpp"
#include "diffseg/image.hpp"
#include "diffseg/phantom.hpp"

namespace diffseg::manipulate {

using classifier::ClassifierModel;
using classifier::Vector;

struct ManipulationConfig {
    double alpha = 1.5;
    bool normalize_gradient = true;
    int substeps = 0;  // 0: the DiffAE's configured sampling substeps
    int batch_size = 16;
};

/// z + alpha * g, g the classifier's latent gradient (unit length when
/// normalising). A zero gradient leaves z unchanged.
Vector inject(std::span<const double> z, const ClassifierModel& model, double alpha, bool normalize = true);

struct ImagePair {
    Image original;   // plain reconstruction
    Image fibrotic;   // reconstruction under the injected latent
};

/// Encodes, inverts and decodes a batch of negatives once, then decodes the
/// shared x_T under injected latents for any number of strengths.
class PairGenerator {
public:
    PairGenerator(const diffae::DiffAE& model, const ClassifierModel& classifier, ManipulationConfig config);

    /// Rejects positive slices.
    void prepare(std::span<const Slice> negatives);
    /// Same, for bare images the caller vouches are negative.
    void prepare_images(std::span<const Image> negatives);

    [[nodiscard]] std::size_t size() const noexcept { return originals_.size(); }
    [[nodiscard]] const std::vector<Image>& originals() const noexcept { return originals_; }
    [[nodiscard]] const std::vector<Vector>& latents() const noexcept { return latents_; }

    [[nodiscard]] std::vector<Image> fibrotic(double alpha) const;

private:
    const diffae::DiffAE* model_;
    ClassifierModel classifier_;  // copied; callers often pass temporaries
    ManipulationConfig config_;
    std::vector<Vector> latents_;
    std::vector<nn::Tensor> x_T_;  // one tensor per batch
    std::vector<Image> originals_;
};

/// Single-slice form: positive input is an invalid argument.
ImagePair generate_pair(const Slice& slice, double alpha, const diffae::DiffAE& model,
                        const ClassifierModel& classifier, const ManipulationConfig& config = {});

struct FIDStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    std::size_t n = 0;
};

/// Sample mean and (n - 1)-normalised covariance, symmetrised.
FIDStats fit_stats(std::span<const Vector> features);
/// ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
double fid(const FIDStats& a, const FIDStats& b);

/// Maps an image to a feature vector for FID; default is the DiffAE encoder.
using FeatureExtractor = std::function<std::vector<Vector>(std::span<const Image>)>;
FeatureExtractor encoder_features(const diffae::DiffAE& model, int batch_size = 32);

struct SweepRow {
    double alpha = 0.0;
    double fid = 0.0;
    std::size_t n_generated = 0;
};

struct SweepResult {
    double alpha_star = 0.0;
    std::vector<SweepRow> table;
};

/// Minimum-FID row; ties go to the smaller alpha.
double argmin_alpha(std::span<const SweepRow> table);

std::vector<double> default_alphas();

SweepResult select_alpha(std::span<const double> candidates, std::span<const Slice> negatives,
                         std::span<const Slice> real_fibrotic, const diffae::DiffAE& model,
                         const ClassifierModel& classifier, const ManipulationConfig& config = {},
                         const FeatureExtractor& features = {});

/// sweep.csv (alpha,fid,n_generated) and sweep.json under `dir`.
void write_sweep(const std::filesystem::path& dir, const SweepResult& result);
SweepResult read_sweep(const std::filesystem::path& dir);

Vector to_double(std::span<const float> v);
std::vector<float> to_float(std::span<const double> v);

}  // namespace diffseg::manipulate
