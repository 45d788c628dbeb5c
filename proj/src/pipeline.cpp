// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffseg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "diffseg/errors.hpp"
#include "diffseg/hashing.hpp"
#include "diffseg/io.hpp"
#include "diffseg/log.hpp"
#include "diffseg/manipulate.hpp"

namespace diffseg::pipeline {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

json train_to_json(const diffae::TrainConfig& t) {
    return {{"steps", t.steps},           {"batch_size", t.batch_size}, {"lr", t.lr},
            {"log_every", t.log_every},   {"eval_every", t.eval_every}, {"val_samples", t.val_samples}};
}

diffae::TrainConfig train_from_json(const json& j) {
    diffae::TrainConfig t;
    t.steps = j.value("steps", t.steps);
    t.batch_size = j.value("batch_size", t.batch_size);
    t.lr = j.value("lr", t.lr);
    t.log_every = j.value("log_every", t.log_every);
    t.eval_every = j.value("eval_every", t.eval_every);
    t.val_samples = j.value("val_samples", t.val_samples);
    return t;
}

json phantom_to_json(const GenerationConfig& g) {
    return {{"positives", g.positives},
            {"negatives", g.negatives},
            {"size", g.size},
            {"test_fraction", g.test_fraction},
            {"val_fraction", g.val_fraction},
            {"severity_min", g.severity_min},
            {"severity_max", g.severity_max},
            {"rim_fraction", g.phantom.rim_fraction},
            {"abnormality_probability", g.phantom.abnormality_probability}};
}

GenerationConfig phantom_from_json(const json& j) {
    GenerationConfig g;
    g.positives = j.value("positives", g.positives);
    g.negatives = j.value("negatives", g.negatives);
    g.size = j.value("size", g.size);
    g.test_fraction = j.value("test_fraction", g.test_fraction);
    g.val_fraction = j.value("val_fraction", g.val_fraction);
    g.severity_min = j.value("severity_min", g.severity_min);
    g.severity_max = j.value("severity_max", g.severity_max);
    g.phantom.rim_fraction = j.value("rim_fraction", g.phantom.rim_fraction);
    g.phantom.abnormality_probability = j.value("abnormality_probability", g.phantom.abnormality_probability);
    return g;
}

json classifier_to_json(const classifier::ClassifierConfig& c) {
    return {{"epochs", c.epochs}, {"lr", c.lr}, {"weight_decay", c.weight_decay}, {"val_fraction", c.val_fraction}};
}

classifier::ClassifierConfig classifier_from_json(const json& j) {
    classifier::ClassifierConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    return c;
}

json sweep_to_json(const SweepStageConfig& s) {
    return {{"alphas", s.alphas},
            {"negatives", s.negatives},
            {"normalize_gradient", s.normalize_gradient},
            {"substeps", s.substeps},
            {"batch_size", s.batch_size}};
}

SweepStageConfig sweep_from_json(const json& j) {
    SweepStageConfig s;
    s.alphas = j.value("alphas", s.alphas);
    s.negatives = j.value("negatives", s.negatives);
    s.normalize_gradient = j.value("normalize_gradient", s.normalize_gradient);
    s.substeps = j.value("substeps", s.substeps);
    s.batch_size = j.value("batch_size", s.batch_size);
    return s;
}

json segnet_to_json(segnet::SegTrainConfig s) {
    json j = s.to_json();
    j.erase("seed");  // derived from the global seed
    return j;
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

json PipelineConfig::to_json() const {
    json segnet_json = segnet_to_json(segnet);
    return {{"seed", seed},
            {"phantom", phantom_to_json(phantom)},
            {"diffae", {{"model", diffae.model.to_json()}, {"train", train_to_json(diffae.train)}}},
            {"classifier", classifier_to_json(classifier)},
            {"sweep", sweep_to_json(sweep)},
            {"maskgen", maskgen.to_json()},
            {"segnet", segnet_json},
            {"evaluate", {{"ablation_pairs", evaluate.ablation_pairs}, {"panels", evaluate.panels}}}};
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    static const std::vector<std::string> known = {"seed",    "phantom", "diffae", "classifier",
                                                   "sweep",   "maskgen", "segnet", "evaluate"};
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw std::invalid_argument("pipeline config: unknown section '" + key + "'");
        }
    }
    PipelineConfig c;
    c.seed = j.value("seed", c.seed);
    if (j.contains("phantom")) {
        c.phantom = phantom_from_json(j.at("phantom"));
    }
    if (j.contains("diffae")) {
        const auto& d = j.at("diffae");
        if (d.contains("model")) {
            c.diffae.model = diffae::DiffAEConfig::from_json(d.at("model"));
        }
        if (d.contains("train")) {
            c.diffae.train = train_from_json(d.at("train"));
        }
    }
    if (j.contains("classifier")) {
        c.classifier = classifier_from_json(j.at("classifier"));
    }
    if (j.contains("sweep")) {
        c.sweep = sweep_from_json(j.at("sweep"));
    }
    if (j.contains("maskgen")) {
        c.maskgen = maskgen::RefineConfig::from_json(j.at("maskgen"));
    }
    if (j.contains("segnet")) {
        c.segnet = segnet::SegTrainConfig::from_json(j.at("segnet"));
    }
    if (j.contains("evaluate")) {
        c.evaluate.ablation_pairs = j.at("evaluate").value("ablation_pairs", c.evaluate.ablation_pairs);
        c.evaluate.panels = j.at("evaluate").value("panels", c.evaluate.panels);
    }
    c.diffae.model.image_size = c.phantom.size;
    c.segnet.net.image_size = c.phantom.size;
    return c;
}

std::string PipelineConfig::hash() const { return sha256_hex(to_json().dump()); }

PipelineConfig load_config(const fs::path& path) { return PipelineConfig::from_json(io::read_json(path)); }

PipelineConfig default_config() {
    PipelineConfig c;
    c.diffae.train.steps = 3000;
    c.diffae.train.eval_every = 500;
    c.diffae.train.log_every = 250;
    return c;
}

PipelineConfig smoke_config() {
    PipelineConfig c;
    c.phantom.positives = 60;
    c.phantom.negatives = 60;
    c.phantom.size = 32;
    c.diffae.model.image_size = 32;
    c.diffae.model.base_channels = 8;
    c.diffae.model.latent_dim = 16;
    c.diffae.model.sample_substeps = 5;
    c.diffae.train.steps = 40;
    c.diffae.train.eval_every = 20;
    c.diffae.train.log_every = 20;
    c.diffae.train.val_samples = 8;
    c.classifier.epochs = 100;
    c.sweep.alphas = {0.5, 1.5};
    c.sweep.negatives = 10;
    c.segnet.net.image_size = 32;
    c.segnet.net.base_channels = 8;
    c.segnet.steps = 10;
    c.segnet.eval_every = 5;
    c.segnet.batch_size = 4;
    c.evaluate.ablation_pairs = 8;
    c.evaluate.panels = 2;
    return c;
}

// ---------------------------------------------------------------------------
// Manifest

json RunManifest::to_json() const {
    json stages_json = json::array();
    for (const auto& s : stages) {
        auto arts = [](const std::vector<Artifact>& v) {
            json a = json::array();
            for (const auto& x : v) {
                a.push_back({{"path", x.path}, {"sha256", x.sha256}});
            }
            return a;
        };
        stages_json.push_back({{"name", s.name},
                               {"key", s.key},
                               {"dir", s.dir},
                               {"status", s.status},
                               {"seed", s.seed},
                               {"inputs", arts(s.inputs)},
                               {"outputs", arts(s.outputs)},
                               {"reads", s.reads},
                               {"gt_reads", s.gt_reads},
                               {"started", s.started},
                               {"finished", s.finished},
                               {"seconds", s.seconds},
                               {"summary", s.summary}});
    }
    return {{"run_id", run_id},
            {"config_hash", config_hash},
            {"run_dir", run_dir},
            {"complete", complete},
            {"stages", stages_json}};
}

RunManifest RunManifest::from_json(const json& j) {
    RunManifest m;
    m.run_id = j.at("run_id").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.run_dir = j.value("run_dir", "");
    m.complete = j.value("complete", false);
    auto arts = [](const json& a) {
        std::vector<Artifact> v;
        for (const auto& x : a) {
            v.push_back({x.at("path").get<std::string>(), x.at("sha256").get<std::string>()});
        }
        return v;
    };
    for (const auto& s : j.at("stages")) {
        StageRecord r;
        r.name = s.at("name").get<std::string>();
        r.key = s.at("key").get<std::string>();
        r.dir = s.at("dir").get<std::string>();
        r.status = s.at("status").get<std::string>();
        r.seed = s.value("seed", std::uint64_t{0});
        r.inputs = arts(s.at("inputs"));
        r.outputs = arts(s.at("outputs"));
        r.reads = s.value("reads", std::size_t{0});
        r.gt_reads = s.value("gt_reads", std::size_t{0});
        r.started = s.value("started", "");
        r.finished = s.value("finished", "");
        r.seconds = s.value("seconds", 0.0);
        r.summary = s.value("summary", json::object());
        m.stages.push_back(std::move(r));
    }
    return m;
}

json RunManifest::canonical_json() const {
    json j = to_json();
    j.erase("run_dir");
    for (auto& s : j["stages"]) {
        s.erase("started");
        s.erase("finished");
        s.erase("seconds");
        s.erase("status");
    }
    return j;
}

fs::path RunManifest::stage_dir(const std::string& stage) const {
    const StageRecord* s = find(stage);
    if (s == nullptr) {
        throw InvalidState("run " + run_id + " has no stage '" + stage + "'");
    }
    return root() / s->dir;
}

const StageRecord* RunManifest::find(const std::string& stage) const {
    for (const auto& s : stages) {
        if (s.name == stage) {
            return &s;
        }
    }
    return nullptr;
}

std::string tree_checksum(const fs::path& dir) {
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& e : fs::recursive_directory_iterator(dir)) {
        if (e.is_regular_file()) {
            files.emplace_back(fs::relative(e.path(), dir).generic_string(), sha256_file(e.path()));
        }
    }
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& [name, digest] : files) {
        acc += name + ":" + digest + "\n";
    }
    return sha256_hex(acc);
}

bool is_ground_truth_path(const std::string& path) {
    return fs::path(path).parent_path().filename() == "gt";
}

namespace {

std::string artifact_checksum(const fs::path& p) { return fs::is_directory(p) ? tree_checksum(p) : sha256_file(p); }

bool artifacts_match(const fs::path& dir, const std::vector<Artifact>& artifacts) {
    for (const auto& a : artifacts) {
        const fs::path p = dir / a.path;
        if (!fs::exists(p) || artifact_checksum(p) != a.sha256) {
            return false;
        }
    }
    return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Refinement ablation

json AblationResult::to_json() const {
    json rows = json::array();
    for (std::size_t i = 0; i < ids.size(); ++i) {
        rows.push_back({{"id", ids[i]}, {"refined", refined[i]}, {"raw_otsu", raw[i]}});
    }
    return {{"pairs", ids.size()},
            {"mean_refined", mean_refined},
            {"mean_raw_otsu", mean_raw},
            {"improvement", mean_refined - mean_raw},
            {"per_pair", rows}};
}

namespace {

std::vector<Image> reconstruct_batch(const diffae::DiffAE& model, std::span<const Image> images, int batch_size) {
    std::vector<Image> out;
    const int substeps = model.config().sample_substeps;
    for (std::size_t first = 0; first < images.size(); first += static_cast<std::size_t>(batch_size)) {
        const std::size_t count = std::min<std::size_t>(batch_size, images.size() - first);
        const nn::Tensor x0 = diffae::to_tensor(images.subspan(first, count));
        const nn::Tensor z = model.encode(x0);
        const nn::Tensor xT = diffae::ddim_invert(x0, z, model.schedule(), substeps, model);
        const nn::Tensor rec = diffae::ddim_sample(xT, z, model.schedule(), substeps, model);
        for (std::size_t i = 0; i < count; ++i) {
            out.push_back(diffae::to_image(rec, static_cast<int>(i)));
        }
    }
    return out;
}

}  // namespace

AblationResult refinement_ablation(const diffae::DiffAE& model, const classifier::ClassifierModel& classifier,
                                   const manipulate::ManipulationConfig& edit,
                                   std::span<const ManifestEntry* const> positives, const DatasetManifest& manifest,
                                   const maskgen::RefineConfig& refine) {
    AblationResult r;
    std::vector<Image> images;
    std::vector<Mask> lungs;
    std::vector<Mask> truth;
    for (const ManifestEntry* e : positives) {
        if (e->label != Label::fibrosis_positive) {
            throw std::invalid_argument("refinement_ablation: entries must be positives");
        }
        const Slice s = load_slice(manifest, *e);
        r.ids.push_back(e->id);
        images.push_back(s.pixels);
        lungs.push_back(s.lung_mask);
        truth.push_back(load_ground_truth(manifest, *e));
    }
    const int substeps = edit.substeps > 0 ? edit.substeps : model.config().sample_substeps;
    const int batch = std::max(1, edit.batch_size);
    std::vector<Image> original;
    std::vector<Image> edited;
    for (std::size_t first = 0; first < images.size(); first += static_cast<std::size_t>(batch)) {
        const std::size_t count = std::min<std::size_t>(batch, images.size() - first);
        const nn::Tensor x0 = diffae::to_tensor(std::span<const Image>(images).subspan(first, count));
        const nn::Tensor z = model.encode(x0);
        const nn::Tensor xT = diffae::ddim_invert(x0, z, model.schedule(), substeps, model);
        // Same edit as pair generation, stepped against the gradient.
        nn::Tensor z_edit = z;
        for (std::size_t i = 0; i < count; ++i) {
            const auto zi = manipulate::to_double(diffae::latent_row(z, static_cast<int>(i)));
            const auto up = manipulate::inject(zi, classifier, edit.alpha, edit.normalize_gradient);
            for (std::size_t k = 0; k < zi.size(); ++k) {
                z_edit[i * zi.size() + k] = static_cast<float>(2.0 * zi[k] - up[k]);
            }
        }
        const nn::Tensor rec = diffae::ddim_sample(xT, z, model.schedule(), substeps, model);
        const nn::Tensor out = diffae::ddim_sample(xT, z_edit, model.schedule(), substeps, model);
        for (std::size_t i = 0; i < count; ++i) {
            original.push_back(diffae::to_image(rec, static_cast<int>(i)));
            edited.push_back(diffae::to_image(out, static_cast<int>(i)));
        }
    }
    for (std::size_t i = 0; i < r.ids.size(); ++i) {
        const auto diff = maskgen::difference_map(original[i], edited[i]);
        r.refined.push_back(segnet::dice(maskgen::refine(diff, lungs[i], refine, r.ids[i]).mask, truth[i]));
        r.raw.push_back(segnet::dice(maskgen::raw_otsu(diff), truth[i]));
    }
    if (!r.ids.empty()) {
        const auto n = static_cast<double>(r.ids.size());
        r.mean_refined = std::accumulate(r.refined.begin(), r.refined.end(), 0.0) / n;
        r.mean_raw = std::accumulate(r.raw.begin(), r.raw.end(), 0.0) / n;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Stages

namespace {

struct StageContext {
    const PipelineConfig& config;
    fs::path dir;
    std::uint64_t seed;
    const std::map<std::string, StageRecord>& done;
    fs::path root;

    [[nodiscard]] fs::path upstream(const std::string& stage) const { return root / done.at(stage).dir; }
};

struct StageOutput {
    std::vector<std::string> outputs;  // relative to the stage dir
    json summary = json::object();
};

using StageFn = std::function<StageOutput(const StageContext&)>;

struct StageSpec {
    std::string name;
    std::vector<std::string> depends;
    // Inputs consumed from upstream stages: {stage, relative path}.
    std::vector<std::pair<std::string, std::string>> inputs;
    json config;
    StageFn run;
};

std::vector<const ManifestEntry*> entries(const DatasetManifest& m, std::initializer_list<Split> splits,
                                          std::optional<Label> label = std::nullopt) {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : m.entries) {
        if (std::find(splits.begin(), splits.end(), e.split) != splits.end() && (!label || e.label == *label)) {
            out.push_back(&e);
        }
    }
    return out;
}

std::vector<Slice> load_slices(const DatasetManifest& m, const std::vector<const ManifestEntry*>& es) {
    std::vector<Slice> out;
    out.reserve(es.size());
    for (const auto* e : es) {
        out.push_back(load_slice(m, *e));
    }
    return out;
}

std::vector<Image> pixels(const std::vector<Slice>& slices) {
    std::vector<Image> out;
    out.reserve(slices.size());
    for (const auto& s : slices) {
        out.push_back(s.pixels);
    }
    return out;
}

StageOutput stage_phantom(const StageContext& ctx) {
    GenerationConfig g = ctx.config.phantom;
    g.seed = ctx.seed;
    const auto m = build_dataset(g, ctx.dir / "dataset");
    const auto train = m.counts(Split::train);
    const auto val = m.counts(Split::val);
    const auto test = m.counts(Split::test);
    return {{"dataset"},
            {{"slices", m.entries.size()},
             {"train", {{"positives", train.positives}, {"negatives", train.negatives}}},
             {"val", {{"positives", val.positives}, {"negatives", val.negatives}}},
             {"test", {{"positives", test.positives}, {"negatives", test.negatives}}}}};
}

StageOutput stage_diffae(const StageContext& ctx) {
    const auto& cfg = ctx.config.diffae;
    if (cfg.train.steps == 0) {
        // Nothing to train: no checkpoint, so dependants refuse to start.
        return {{}, {{"checkpoint", nullptr}, {"note", "training steps = 0"}}};
    }
    const auto m = load_manifest(ctx.upstream("phantom") / "dataset");
    const auto train_slices = load_slices(m, entries(m, {Split::train}));
    const auto val_slices = load_slices(m, entries(m, {Split::val}));
    const auto train = pixels(train_slices);
    const auto val = pixels(val_slices);
    diffae::DiffAE model(cfg.model, derive_seed(ctx.seed, "init"));
    diffae::TrainConfig tc = cfg.train;
    tc.seed = derive_seed(ctx.seed, "train");
    std::ostringstream history;
    history << "step,train_loss_ema,val_loss\n";
    const auto result = diffae::train_diffae(model, train, val, tc, nullptr, [&](const diffae::LossRecord& r) {
        history << r.step << ',' << r.train_loss << ',' << r.val_loss << '\n';
        log::info("diffae_train", "progress",
                  {{"step", r.step}, {"train_loss", r.train_loss}, {"val_loss", r.val_loss}});
    });
    diffae::save_diffae(ctx.dir / "diffae.ckpt", model);
    io::write_text(ctx.dir / "history.csv", history.str());

    // Round-trip PSNR on a fixed subset of training slices.
    const std::size_t n_psnr = std::min<std::size_t>(16, train.size());
    const auto rec = reconstruct_batch(model, std::span<const Image>(train.data(), n_psnr), 16);
    json psnrs = json::array();
    double total = 0.0;
    double worst = 1e9;
    for (std::size_t i = 0; i < n_psnr; ++i) {
        const double p = diffae::psnr(train[i], rec[i]);
        psnrs.push_back({{"id", train_slices[i].id}, {"psnr", p}});
        total += p;
        worst = std::min(worst, p);
    }
    io::write_json(ctx.dir / "psnr.json", {{"per_slice", psnrs}, {"mean", total / n_psnr}, {"min", worst}});
    return {{"diffae.ckpt", "history.csv", "psnr.json"},
            {{"checkpoint", "diffae.ckpt"},
             {"best_val_loss", result.best_val_loss},
             {"best_step", result.best_step},
             {"psnr_mean", total / n_psnr},
             {"psnr_min", worst}}};
}

StageOutput stage_classifier(const StageContext& ctx) {
    const auto m = load_manifest(ctx.upstream("phantom") / "dataset");
    const auto model = diffae::load_diffae(ctx.upstream("diffae_train") / "diffae.ckpt");
    const auto es = entries(m, {Split::train, Split::val});
    const auto slices = load_slices(m, es);
    const auto feats = manipulate::encoder_features(model)(pixels(slices));
    std::vector<classifier::LabeledLatent> latents;
    for (std::size_t i = 0; i < es.size(); ++i) {
        latents.push_back({es[i]->id, feats[i], es[i]->label == Label::fibrosis_positive});
    }
    classifier::ClassifierConfig cc = ctx.config.classifier;
    cc.seed = ctx.seed;
    const auto cm = classifier::train_classifier(latents, cc);
    classifier::save_latents(ctx.dir / "latents.json", latents);
    classifier::save_model(ctx.dir / "classifier.json", cm);
    return {{"latents.json", "classifier.json"}, {{"val_f1", cm.f1}, {"best_epoch", cm.best_epoch}}};
}

manipulate::ManipulationConfig manipulation(const SweepStageConfig& s, double alpha = 0.0) {
    return {alpha, s.normalize_gradient, s.substeps, s.batch_size};
}

StageOutput stage_sweep(const StageContext& ctx) {
    const auto m = load_manifest(ctx.upstream("phantom") / "dataset");
    const auto model = diffae::load_diffae(ctx.upstream("diffae_train") / "diffae.ckpt");
    const auto cm = classifier::load_model(ctx.upstream("classifier_train") / "classifier.json");
    auto negs = entries(m, {Split::val}, Label::fibrosis_negative);
    if (static_cast<int>(negs.size()) > ctx.config.sweep.negatives) {
        negs.resize(static_cast<std::size_t>(ctx.config.sweep.negatives));
    }
    const auto negatives = load_slices(m, negs);
    const auto real = load_slices(m, entries(m, {Split::train, Split::val}, Label::fibrosis_positive));
    const auto result = manipulate::select_alpha(ctx.config.sweep.alphas, negatives, real, model, cm,
                                                 manipulation(ctx.config.sweep));
    manipulate::write_sweep(ctx.dir, result);
    return {{"sweep.csv", "sweep.json"}, {{"alpha_star", result.alpha_star}, {"candidates", result.table.size()}}};
}

StageOutput stage_pairs(const StageContext& ctx) {
    const auto m = load_manifest(ctx.upstream("phantom") / "dataset");
    const auto model = diffae::load_diffae(ctx.upstream("diffae_train") / "diffae.ckpt");
    const auto cm = classifier::load_model(ctx.upstream("classifier_train") / "classifier.json");
    const double alpha = manipulate::read_sweep(ctx.upstream("alpha_sweep")).alpha_star;
    const auto es = entries(m, {Split::train}, Label::fibrosis_negative);
    const auto negatives = load_slices(m, es);
    manipulate::PairGenerator gen(model, cm, manipulation(ctx.config.sweep, alpha));
    gen.prepare(negatives);
    const auto fibrotic = gen.fibrotic(alpha);
    const auto features = manipulate::encoder_features(model)(fibrotic);
    io::ensure_dir(ctx.dir / "pairs");
    json rows = json::array();
    double score_orig = 0.0;
    double score_fib = 0.0;
    for (std::size_t i = 0; i < es.size(); ++i) {
        const std::string& id = es[i]->id;
        io::write_image_png16(ctx.dir / "pairs" / (id + "_orig.png"), gen.originals()[i]);
        io::write_image_png16(ctx.dir / "pairs" / (id + "_fib.png"), fibrotic[i]);
        const double so = classifier::predict_score(gen.latents()[i], cm);
        const double sf = classifier::predict_score(features[i], cm);
        score_orig += so;
        score_fib += sf;
        rows.push_back({{"id", id}, {"score_original", so}, {"score_fibrotic", sf}});
    }
    const auto n = static_cast<double>(std::max<std::size_t>(1, es.size()));
    io::write_json(ctx.dir / "pairs.json", {{"alpha", alpha}, {"pairs", rows}});
    return {{"pairs", "pairs.json"},
            {{"alpha", alpha},
             {"pairs", es.size()},
             {"mean_score_original", score_orig / n},
             {"mean_score_fibrotic", score_fib / n}}};
}

StageOutput stage_maskgen(const StageContext& ctx) {
    const auto m = load_manifest(ctx.upstream("phantom") / "dataset");
    const fs::path pairs_dir = ctx.upstream("pair_generation");
    const auto listing = io::read_json(pairs_dir / "pairs.json");
    std::size_t empty = 0;
    double foreground = 0.0;
    int components = 0;
    for (const auto& row : listing.at("pairs")) {
        const auto id = row.at("id").get<std::string>();
        const Slice source = load_slice(m, m.find(id));
        const Image a = io::read_image_png16(pairs_dir / "pairs" / (id + "_orig.png"));
        const Image b = io::read_image_png16(pairs_dir / "pairs" / (id + "_fib.png"));
        const auto pm = maskgen::refine(maskgen::difference_map(a, b), source.lung_mask, ctx.config.maskgen, id);
        maskgen::write_pseudo_mask(ctx.dir / "masks", pm, ctx.config.maskgen);
        const auto fg = count_foreground(pm.mask);
        empty += fg == 0 ? 1 : 0;
        foreground += static_cast<double>(fg);
        components += pm.component_count;
    }
    const auto n = static_cast<double>(std::max<std::size_t>(1, listing.at("pairs").size()));
    if (!fs::exists(ctx.dir / "masks")) {
        io::ensure_dir(ctx.dir / "masks");
    }
    return {{"masks"},
            {{"masks", listing.at("pairs").size()},
             {"empty", empty},
             {"mean_foreground", foreground / n},
             {"mean_components", components / n}}};
}

std::vector<segnet::TrainingPair> load_training_pairs(const fs::path& pairs_dir, const fs::path& masks_dir) {
    std::vector<segnet::TrainingPair> pairs;
    const json listing = io::read_json(pairs_dir / "pairs.json");
    for (const auto& row : listing.at("pairs")) {
        const auto id = row.at("id").get<std::string>();
        pairs.push_back({id, io::read_image_png16(pairs_dir / "pairs" / (id + "_fib.png")),
                         maskgen::read_pseudo_mask(masks_dir, id).mask});
    }
    return pairs;
}

StageOutput stage_segnet(const StageContext& ctx) {
    const auto pairs = load_training_pairs(ctx.upstream("pair_generation"), ctx.upstream("maskgen") / "masks");
    segnet::SegTrainConfig sc = ctx.config.segnet;
    sc.seed = ctx.seed;
    const auto outcome = segnet::train_unet(pairs, sc);
    io::ensure_dir(ctx.dir / "models");
    json folds = json::array();
    auto ids = [&](const std::vector<std::size_t>& idx) {
        json a = json::array();
        for (auto i : idx) {
            a.push_back(pairs[i].id);
        }
        return a;
    };
    for (std::size_t f = 0; f < outcome.models.size(); ++f) {
        const auto& mdl = outcome.models[f];
        segnet::save_model(ctx.dir / "models" / ("fold" + std::to_string(f) + ".ckpt"), mdl);
        folds.push_back({{"fold", f},
                         {"val_dice", mdl.val_dice},
                         {"best_step", mdl.best_step},
                         {"train", ids(outcome.plan.train_indices(static_cast<int>(f)))},
                         {"val", ids(outcome.plan.folds[f])}});
    }
    io::write_json(ctx.dir / "folds.json", {{"internal_test", ids(outcome.plan.test)},
                                            {"internal_test_dice", outcome.internal_test_dice},
                                            {"folds", folds}});
    json val_dice = json::array();
    for (const auto& mdl : outcome.models) {
        val_dice.push_back(mdl.val_dice);
    }
    return {{"models", "folds.json"},
            {{"val_dice", val_dice},
             {"best_fold", segnet::best_model(outcome.models).fold},
             {"internal_test_dice", outcome.internal_test_dice}}};
}

StageOutput stage_evaluate(const StageContext& ctx) {
    const auto m = load_manifest(ctx.upstream("phantom") / "dataset");
    std::vector<segnet::SegModel> models;
    for (int f = 0; f < ctx.config.segnet.folds; ++f) {
        models.push_back(segnet::load_model(ctx.upstream("segnet_train") / "models" / ("fold" + std::to_string(f) + ".ckpt")));
    }
    const auto test_entries = entries(m, {Split::test}, Label::fibrosis_positive);
    std::vector<Slice> test;
    for (const auto* e : test_entries) {
        Slice s = load_slice(m, *e);
        s.gt_mask = load_ground_truth(m, *e);
        test.push_back(std::move(s));
    }
    const auto report = segnet::evaluate(models, test);
    segnet::write_report(ctx.dir, report);

    // Panels for the first few test slices.
    const auto& best = segnet::best_model(models);
    io::ensure_dir(ctx.dir / "panels");
    const int panels = std::min<int>(ctx.config.evaluate.panels, static_cast<int>(test.size()));
    for (int i = 0; i < panels; ++i) {
        const auto& s = test[static_cast<std::size_t>(i)];
        const Mask pred = segnet::predict_mask(s.pixels, best);
        segnet::write_panel(ctx.dir / "panels" / (s.id + ".png"), s.pixels, nullptr, &pred, &*s.gt_mask);
    }

    const auto model = diffae::load_diffae(ctx.upstream("diffae_train") / "diffae.ckpt");
    const auto cm = classifier::load_model(ctx.upstream("classifier_train") / "classifier.json");
    const double alpha = manipulate::read_sweep(ctx.upstream("alpha_sweep")).alpha_star;
    auto ablation_entries = test_entries;
    if (static_cast<int>(ablation_entries.size()) > ctx.config.evaluate.ablation_pairs) {
        ablation_entries.resize(static_cast<std::size_t>(ctx.config.evaluate.ablation_pairs));
    }
    const auto ablation =
        refinement_ablation(model, cm, manipulation(ctx.config.sweep, alpha), ablation_entries, m, ctx.config.maskgen);
    io::write_json(ctx.dir / "ablation.json", ablation.to_json());
    return {{"report.json", "dice.csv", "panels", "ablation.json"},
            {{"n", report.n},
             {"mean_dice", report.mean},
             {"median_dice", report.median},
             {"q25", report.q25},
             {"q75", report.q75},
             {"model_fold", report.model_fold},
             {"ablation_pairs", ablation.ids.size()},
             {"ablation_refined", ablation.mean_refined},
             {"ablation_raw_otsu", ablation.mean_raw}}};
}

std::vector<StageSpec> build_stages(const PipelineConfig& c) {
    const json full = c.to_json();
    return {
        {"phantom", {}, {}, {{"seed", c.seed}, {"phantom", full["phantom"]}}, stage_phantom},
        {"diffae_train", {"phantom"}, {{"phantom", "dataset"}}, full["diffae"], stage_diffae},
        {"classifier_train",
         {"phantom", "diffae_train"},
         {{"phantom", "dataset"}, {"diffae_train", "diffae.ckpt"}},
         full["classifier"],
         stage_classifier},
        {"alpha_sweep",
         {"phantom", "diffae_train", "classifier_train"},
         {{"phantom", "dataset"}, {"diffae_train", "diffae.ckpt"}, {"classifier_train", "classifier.json"}},
         full["sweep"],
         stage_sweep},
        {"pair_generation",
         {"phantom", "diffae_train", "classifier_train", "alpha_sweep"},
         {{"phantom", "dataset"},
          {"diffae_train", "diffae.ckpt"},
          {"classifier_train", "classifier.json"},
          {"alpha_sweep", "sweep.json"}},
         full["sweep"],
         stage_pairs},
        {"maskgen",
         {"phantom", "pair_generation"},
         {{"phantom", "dataset"}, {"pair_generation", "pairs"}, {"pair_generation", "pairs.json"}},
         full["maskgen"],
         stage_maskgen},
        {"segnet_train",
         {"pair_generation", "maskgen"},
         {{"pair_generation", "pairs"}, {"pair_generation", "pairs.json"}, {"maskgen", "masks"}},
         full["segnet"],
         stage_segnet},
        {"evaluate",
         {"phantom", "diffae_train", "classifier_train", "alpha_sweep", "segnet_train"},
         {{"phantom", "dataset"},
          {"diffae_train", "diffae.ckpt"},
          {"classifier_train", "classifier.json"},
          {"alpha_sweep", "sweep.json"},
          {"segnet_train", "models"}},
         {{"evaluate", full["evaluate"]}, {"maskgen", full["maskgen"]}, {"sweep", full["sweep"]}},
         stage_evaluate},
    };
}

void write_read_listing(const fs::path& path, const std::vector<std::string>& reads) {
    std::string listing;
    for (const auto& r : reads) {
        listing += r + "\n";
    }
    io::write_text(path, listing);
}

void write_manifest(const RunManifest& m) { io::write_json(fs::path(m.run_dir) / "manifest.json", m.to_json()); }

}  // namespace

RunManifest run_all(const PipelineConfig& config, const RunOptions& options) {
    const auto started = std::chrono::steady_clock::now();
    RunManifest manifest;
    manifest.config_hash = config.hash();
    manifest.run_id = "run-" + manifest.config_hash.substr(0, 16);
    const fs::path root = fs::absolute(options.root);
    const fs::path run_dir = root / manifest.run_id;
    manifest.run_dir = run_dir.string();
    io::ensure_dir(run_dir / "reads");
    io::write_json(run_dir / "config.json", config.to_json());
    log::info("pipeline", "run", {{"run_id", manifest.run_id}, {"root", root.string()}});

    std::map<std::string, StageRecord> done;
    for (const auto& spec : build_stages(config)) {
        StageRecord rec;
        rec.name = spec.name;
        rec.seed = derive_seed(config.seed, spec.name);
        std::string key_material = spec.name + "\n" + spec.config.dump() + "\n" + std::to_string(config.seed);
        for (const auto& dep : spec.depends) {
            key_material += "\n" + done.at(dep).key;
        }
        rec.key = sha256_hex(key_material);
        rec.dir = (fs::path("cache") / (spec.name + "-" + rec.key.substr(0, 16))).generic_string();
        const fs::path dir = root / rec.dir;

        auto fail = [&](const std::string& what) {
            rec.status = "failed";
            rec.finished = utc_now();
            rec.summary["error"] = what;
            manifest.stages.push_back(rec);
            write_manifest(manifest);
            log::event(log::Level::error, spec.name, "stage failed", {{"error", what}});
            throw StageError(spec.name, what);
        };

        // Declared inputs must exist and match the checksums their producer recorded.
        for (const auto& [stage, rel] : spec.inputs) {
            const StageRecord& up = done.at(stage);
            const auto it = std::find_if(up.outputs.begin(), up.outputs.end(),
                                         [&](const Artifact& a) { return a.path == rel; });
            const fs::path p = root / up.dir / rel;
            if (it == up.outputs.end() || !fs::exists(p)) {
                fail("missing input '" + rel + "' from stage '" + stage + "'");
            }
            if (artifact_checksum(p) != it->sha256) {
                fail("input '" + rel + "' from stage '" + stage + "' does not match its recorded checksum");
            }
            rec.inputs.push_back({(fs::path(up.dir) / rel).generic_string(), it->sha256});
        }

        const fs::path marker = dir / "stage.json";
        if (!options.force && fs::exists(marker)) {
            const json cached = io::read_json(marker);
            std::vector<Artifact> outs;
            for (const auto& a : cached.at("outputs")) {
                outs.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>()});
            }
            if (cached.value("key", "") == rec.key && artifacts_match(dir, outs)) {
                rec.status = "skipped (cached)";
                rec.outputs = outs;
                rec.summary = cached.value("summary", json::object());
                // The audit travels with the cached outputs.
                const auto reads = cached.value("reads", std::vector<std::string>{});
                rec.reads = reads.size();
                rec.gt_reads =
                    static_cast<std::size_t>(std::count_if(reads.begin(), reads.end(), is_ground_truth_path));
                write_read_listing(run_dir / "reads" / (spec.name + ".txt"), reads);
                rec.started = rec.finished = utc_now();
                log::info(spec.name, "skipped (cached)", {{"dir", rec.dir}});
                done[spec.name] = rec;
                manifest.stages.push_back(rec);
                write_manifest(manifest);
                continue;
            }
        }

        std::error_code ec;
        fs::remove_all(dir, ec);
        io::ensure_dir(dir);
        rec.started = utc_now();
        const auto t0 = std::chrono::steady_clock::now();
        log::info(spec.name, "start", {{"dir", rec.dir}});
        StageOutput out;
        std::vector<std::string> reads;
        try {
            io::ReadAudit audit;
            out = spec.run(StageContext{config, dir, rec.seed, done, root});
            reads = audit.reads();
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            fail(e.what());
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rec.finished = utc_now();
        rec.reads = reads.size();
        rec.gt_reads = static_cast<std::size_t>(std::count_if(reads.begin(), reads.end(), is_ground_truth_path));
        write_read_listing(run_dir / "reads" / (spec.name + ".txt"), reads);
        if (spec.name != "evaluate" && rec.gt_reads > 0) {
            fail("supervision contract violated: " + std::to_string(rec.gt_reads) + " ground-truth reads");
        }
        for (const auto& rel : out.outputs) {
            rec.outputs.push_back({rel, artifact_checksum(dir / rel)});
        }
        rec.summary = out.summary;
        rec.status = "done";
        json marker_doc = {{"key", rec.key}, {"summary", rec.summary}, {"outputs", json::array()}, {"reads", reads}};
        for (const auto& a : rec.outputs) {
            marker_doc["outputs"].push_back({{"path", a.path}, {"sha256", a.sha256}});
        }
        io::write_json(marker, marker_doc);
        log::info(spec.name, "done", {{"seconds", rec.seconds}, {"summary", rec.summary}});
        done[spec.name] = rec;
        manifest.stages.push_back(rec);
        write_manifest(manifest);
    }
    manifest.complete = true;
    write_manifest(manifest);
    log::info("pipeline", "complete",
              {{"run_id", manifest.run_id},
               {"seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()}});
    return manifest;
}

RunManifest load_run(const fs::path& run_dir) {
    RunManifest m = RunManifest::from_json(io::read_json(run_dir / "manifest.json"));
    m.run_dir = fs::absolute(run_dir).string();
    return m;
}

fs::path resolve_run(const fs::path& root, const std::string& run) {
    if (fs::exists(fs::path(run) / "manifest.json")) {
        return run;
    }
    const fs::path p = root / run;
    if (fs::exists(p / "manifest.json")) {
        return p;
    }
    throw InvalidState("no run manifest found for '" + run + "'");
}

}  // namespace diffseg::pipeline
