// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/manipulate.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "diffseg/io.hpp"
#include "diffseg/log.hpp"

namespace diffseg::manipulate {

Vector to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

std::vector<float> to_float(std::span<const double> v) {
    std::vector<float> out(v.size());
    std::transform(v.begin(), v.end(), out.begin(), [](double x) { return static_cast<float>(x); });
    return out;
}

Vector inject(std::span<const double> z, const ClassifierModel& model, double alpha, bool normalize) {
    if (!(alpha >= 0.0)) {
        throw std::invalid_argument("inject: alpha must be >= 0");
    }
    Vector g = classifier::latent_gradient(z, model);
    Vector out(z.begin(), z.end());
    double norm = 0.0;
    for (double v : g) {
        norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0 || alpha == 0.0) {
        return out;
    }
    const double scale = normalize ? alpha / norm : alpha;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += scale * g[i];
    }
    return out;
}

PairGenerator::PairGenerator(const diffae::DiffAE& model, const ClassifierModel& classifier,
                             ManipulationConfig config)
    : model_(&model), classifier_(classifier), config_(config) {
    if (config_.substeps == 0) {
        config_.substeps = model.config().sample_substeps;
    }
    if (config_.batch_size < 1) {
        throw std::invalid_argument("PairGenerator: batch_size must be >= 1");
    }
    if (classifier.dim() != static_cast<std::size_t>(model.config().latent_dim)) {
        throw std::invalid_argument("PairGenerator: classifier and DiffAE latent dimensions differ");
    }
}

void PairGenerator::prepare(std::span<const Slice> negatives) {
    std::vector<Image> images;
    images.reserve(negatives.size());
    for (const auto& s : negatives) {
        if (s.label != Label::fibrosis_negative) {
            throw std::invalid_argument("PairGenerator: slice '" + s.id +
                                        "' is labelled positive; injection starts from negatives");
        }
        images.push_back(s.pixels);
    }
    prepare_images(images);
}

void PairGenerator::prepare_images(std::span<const Image> negatives) {
    latents_.clear();
    x_T_.clear();
    originals_.clear();
    const auto& schedule = model_->schedule();
    for (std::size_t first = 0; first < negatives.size(); first += static_cast<std::size_t>(config_.batch_size)) {
        const std::size_t count = std::min<std::size_t>(config_.batch_size, negatives.size() - first);
        const nn::Tensor x0 = diffae::to_tensor(negatives.subspan(first, count));
        const nn::Tensor z = model_->encode(x0);
        nn::Tensor xT = diffae::ddim_invert(x0, z, schedule, config_.substeps, *model_);
        const nn::Tensor rec = diffae::ddim_sample(xT, z, schedule, config_.substeps, *model_);
        for (std::size_t i = 0; i < count; ++i) {
            latents_.push_back(to_double(diffae::latent_row(z, static_cast<int>(i))));
            originals_.push_back(diffae::to_image(rec, static_cast<int>(i)));
        }
        x_T_.push_back(std::move(xT));
    }
}

std::vector<Image> PairGenerator::fibrotic(double alpha) const {
    std::vector<Image> out;
    out.reserve(originals_.size());
    std::size_t offset = 0;
    for (const auto& xT : x_T_) {
        const int count = xT.shape().n;
        if (alpha == 0.0) {
            // Decoding the unedited latent reproduces the plain reconstruction.
            for (int i = 0; i < count; ++i) {
                out.push_back(originals_[offset + static_cast<std::size_t>(i)]);
            }
        } else {
            std::vector<std::vector<float>> zs;
            for (int i = 0; i < count; ++i) {
                zs.push_back(to_float(inject(latents_[offset + static_cast<std::size_t>(i)], classifier_, alpha,
                                             config_.normalize_gradient)));
            }
            const nn::Tensor rec = diffae::ddim_sample(xT, diffae::latent_tensor(zs), model_->schedule(),
                                                       config_.substeps, *model_);
            for (int i = 0; i < count; ++i) {
                out.push_back(diffae::to_image(rec, i));
            }
        }
        offset += static_cast<std::size_t>(count);
    }
    return out;
}

ImagePair generate_pair(const Slice& slice, double alpha, const diffae::DiffAE& model,
                        const ClassifierModel& classifier, const ManipulationConfig& config) {
    if (slice.label != Label::fibrosis_negative) {
        throw std::invalid_argument("generate_pair: input slice must be fibrosis_negative");
    }
    if (!(alpha >= 0.0)) {
        throw std::invalid_argument("generate_pair: alpha must be >= 0");
    }
    PairGenerator gen(model, classifier, config);
    gen.prepare(std::span<const Slice>(&slice, 1));
    return {gen.originals().front(), gen.fibrotic(alpha).front()};
}

FIDStats fit_stats(std::span<const Vector> features) {
    if (features.size() < 2) {
        throw std::invalid_argument("fit_stats: need at least two feature vectors");
    }
    const auto d = static_cast<Eigen::Index>(features.front().size());
    Eigen::MatrixXd x(static_cast<Eigen::Index>(features.size()), d);
    for (std::size_t i = 0; i < features.size(); ++i) {
        if (static_cast<Eigen::Index>(features[i].size()) != d) {
            throw std::invalid_argument("fit_stats: features differ in dimension");
        }
        x.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::RowVectorXd>(features[i].data(), d);
    }
    FIDStats s;
    s.n = features.size();
    s.mu = x.colwise().mean().transpose();
    const Eigen::MatrixXd centered = x.rowwise() - s.mu.transpose();
    s.sigma = centered.transpose() * centered / static_cast<double>(s.n - 1);
    s.sigma = 0.5 * (s.sigma + s.sigma.transpose()).eval();
    return s;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const FIDStats& a, const FIDStats& b) {
    if (a.mu.size() != b.mu.size() || a.sigma.rows() != b.sigma.rows()) {
        throw std::invalid_argument("fid: dimension mismatch");
    }
    // Tr((Sa Sb)^{1/2}) = Tr((Sa^{1/2} Sb Sa^{1/2})^{1/2}); the inner matrix is
    // symmetric PSD, so its root comes from a symmetric eigensolve.
    const Eigen::MatrixXd ra = psd_sqrt(a.sigma);
    const Eigen::MatrixXd inner = ra * b.sigma * ra;
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double mean_term = (a.mu - b.mu).squaredNorm();
    const double value = mean_term + a.sigma.trace() + b.sigma.trace() - 2.0 * cross;
    return std::max(0.0, value);
}

FeatureExtractor encoder_features(const diffae::DiffAE& model, int batch_size) {
    return [&model, batch_size](std::span<const Image> images) {
        std::vector<Vector> out;
        out.reserve(images.size());
        for (std::size_t first = 0; first < images.size(); first += static_cast<std::size_t>(batch_size)) {
            const std::size_t count = std::min<std::size_t>(batch_size, images.size() - first);
            const nn::Tensor z = model.encode(diffae::to_tensor(images.subspan(first, count)));
            for (std::size_t i = 0; i < count; ++i) {
                out.push_back(to_double(diffae::latent_row(z, static_cast<int>(i))));
            }
        }
        return out;
    };
}

double argmin_alpha(std::span<const SweepRow> table) {
    if (table.empty()) {
        throw std::invalid_argument("argmin_alpha: empty table");
    }
    const SweepRow* best = &table.front();
    for (const auto& row : table) {
        if (row.fid < best->fid || (row.fid == best->fid && row.alpha < best->alpha)) {
            best = &row;
        }
    }
    return best->alpha;
}

std::vector<double> default_alphas() { return {0.5, 1.0, 1.5, 2.0, 2.5, 3.0}; }

SweepResult select_alpha(std::span<const double> candidates, std::span<const Slice> negatives,
                         std::span<const Slice> real_fibrotic, const diffae::DiffAE& model,
                         const ClassifierModel& classifier, const ManipulationConfig& config,
                         const FeatureExtractor& features) {
    if (candidates.size() < 2) {
        throw std::invalid_argument("select_alpha: need at least two candidate strengths");
    }
    if (negatives.empty() || real_fibrotic.empty()) {
        throw std::invalid_argument("select_alpha: slice sets must be non-empty");
    }
    if (negatives.size() < 10 || real_fibrotic.size() < 10) {
        throw std::invalid_argument("select_alpha: need at least 10 slices per set");
    }
    for (double a : candidates) {
        if (!(a >= 0.0)) {
            throw std::invalid_argument("select_alpha: candidates must be >= 0");
        }
    }
    const FeatureExtractor extract = features ? features : encoder_features(model);
    std::vector<Image> real;
    for (const auto& s : real_fibrotic) {
        real.push_back(s.pixels);
    }
    const FIDStats real_stats = fit_stats(extract(real));

    PairGenerator gen(model, classifier, config);
    gen.prepare(negatives);
    SweepResult result;
    for (double alpha : candidates) {
        const auto generated = gen.fibrotic(alpha);
        const double value = fid(fit_stats(extract(generated)), real_stats);
        result.table.push_back({alpha, value, generated.size()});
        log::info("manipulate", "sweep point", {{"alpha", alpha}, {"fid", value}, {"n", generated.size()}});
    }
    result.alpha_star = argmin_alpha(result.table);
    return result;
}

void write_sweep(const std::filesystem::path& dir, const SweepResult& result) {
    io::ensure_dir(dir);
    std::ostringstream csv;
    csv << "alpha,fid,n_generated\n";
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : result.table) {
        char line[128];
        std::snprintf(line, sizeof line, "%.17g,%.17g,%zu\n", r.alpha, r.fid, r.n_generated);
        csv << line;
        rows.push_back({{"alpha", r.alpha}, {"fid", r.fid}, {"n_generated", r.n_generated}});
    }
    io::write_text(dir / "sweep.csv", csv.str());
    io::write_json(dir / "sweep.json", {{"alpha_star", result.alpha_star}, {"table", rows}});
}

SweepResult read_sweep(const std::filesystem::path& dir) {
    const auto doc = io::read_json(dir / "sweep.json");
    SweepResult r;
    r.alpha_star = doc.at("alpha_star").get<double>();
    for (const auto& row : doc.at("table")) {
        r.table.push_back({row.at("alpha").get<double>(), row.at("fid").get<double>(),
                           row.at("n_generated").get<std::size_t>()});
    }
    return r;
}

}  // namespace diffseg::manipulate
