// Copyright (C) 2026 The DiffSeg Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "diffseg/classifier.hpp"
#include "diffseg/diffae.hpp"
#include "diffseg/errors.hpp"
#include "diffseg/hashing.hpp"
#include "diffseg/io.hpp"
#include "diffseg/log.hpp"
#include "diffseg/manipulate.hpp"
#include "diffseg/maskgen.hpp"
#include "diffseg/phantom.hpp"
#include "diffseg/pipeline.hpp"
#include "diffseg/segnet.hpp"

namespace fs = std::filesystem;
using namespace diffseg;

namespace {

std::vector<Image> images_of(const DatasetManifest& m, const std::vector<const ManifestEntry*>& es) {
    std::vector<Image> out;
    for (const auto* e : es) {
        out.push_back(load_slice(m, *e).pixels);
    }
    return out;
}

std::vector<const ManifestEntry*> pool(const DatasetManifest& m, std::initializer_list<Split> splits) {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : m.entries) {
        if (std::find(splits.begin(), splits.end(), e.split) != splits.end()) {
            out.push_back(&e);
        }
    }
    return out;
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Weakly supervised lung-fibrosis segmentation from image-level labels"};
    app.require_subcommand(1);
    bool quiet = false;
    std::string log_file;
    app.add_flag("-q,--quiet", quiet, "Silence log lines on stderr");
    app.add_option("--log-file", log_file, "Also append log lines to this file");

    // phantom
    auto* phantom_cmd = app.add_subcommand("phantom", "Synthetic lung phantoms");
    phantom_cmd->require_subcommand(1);
    auto* gen = phantom_cmd->add_subcommand("gen", "Generate a labelled dataset");
    GenerationConfig gcfg;
    int count = 0;
    std::string gen_out;
    gen->add_option("--count", count, "Total slices, split evenly between classes");
    gen->add_option("--positives", gcfg.positives);
    gen->add_option("--negatives", gcfg.negatives);
    gen->add_option("--size", gcfg.size);
    gen->add_option("--seed", gcfg.seed);
    gen->add_option("--rim-fraction", gcfg.phantom.rim_fraction);
    gen->add_option("--out", gen_out)->required();

    // diffae
    auto* dae_cmd = app.add_subcommand("diffae", "Diffusion autoencoder");
    dae_cmd->require_subcommand(1);
    auto* dae_train = dae_cmd->add_subcommand("train", "Train on a dataset's train split");
    std::string manifest_path;
    std::string ckpt_out;
    diffae::DiffAEConfig dcfg;
    diffae::TrainConfig tcfg;
    dae_train->add_option("--manifest", manifest_path)->required();
    dae_train->add_option("--out", ckpt_out)->required();
    dae_train->add_option("--steps", tcfg.steps);
    dae_train->add_option("--batch", tcfg.batch_size);
    dae_train->add_option("--lr", tcfg.lr);
    dae_train->add_option("--seed", tcfg.seed);
    dae_train->add_option("--latent-dim", dcfg.latent_dim);
    dae_train->add_option("--base-channels", dcfg.base_channels);
    dae_train->add_option("--substeps", dcfg.sample_substeps);
    auto* dae_rec = dae_cmd->add_subcommand("reconstruct", "Encode, invert and decode one slice");
    std::string ckpt;
    std::string slice_id;
    std::string rec_out;
    dae_rec->add_option("--ckpt", ckpt)->required();
    dae_rec->add_option("--manifest", manifest_path)->required();
    dae_rec->add_option("--slice", slice_id)->required();
    dae_rec->add_option("--out", rec_out, "Reconstruction PNG");

    // classifier
    auto* cls_cmd = app.add_subcommand("classifier", "Linear latent classifier");
    cls_cmd->require_subcommand(1);
    auto* cls_encode = cls_cmd->add_subcommand("encode", "Write labelled latents for the train and val splits");
    std::string latents_path;
    cls_encode->add_option("--ckpt", ckpt)->required();
    cls_encode->add_option("--manifest", manifest_path)->required();
    cls_encode->add_option("--out", latents_path)->required();
    auto* cls_train = cls_cmd->add_subcommand("train", "Train on labelled latents");
    classifier::ClassifierConfig ccfg;
    std::string model_path;
    cls_train->add_option("--latents", latents_path)->required();
    cls_train->add_option("--out", model_path)->required();
    cls_train->add_option("--epochs", ccfg.epochs);
    cls_train->add_option("--lr", ccfg.lr);
    cls_train->add_option("--seed", ccfg.seed);
    auto* cls_eval = cls_cmd->add_subcommand("eval", "F1 and confusion counts on labelled latents");
    cls_eval->add_option("--model", model_path)->required();
    cls_eval->add_option("--latents", latents_path)->required();

    // manipulate
    auto* man_cmd = app.add_subcommand("manipulate", "Latent manipulation");
    man_cmd->require_subcommand(1);
    auto* sweep = man_cmd->add_subcommand("sweep", "Pick the manipulation strength by FID");
    std::vector<double> alphas = manipulate::default_alphas();
    int sweep_negatives = 32;
    std::string out_dir;
    manipulate::ManipulationConfig mcfg;
    sweep->add_option("--alphas", alphas);
    sweep->add_option("--ckpt", ckpt)->required();
    sweep->add_option("--classifier", model_path)->required();
    sweep->add_option("--manifest", manifest_path)->required();
    sweep->add_option("--negatives", sweep_negatives, "Validation negatives to edit");
    sweep->add_option("--out", out_dir)->required();
    auto* pair = man_cmd->add_subcommand("pair", "Generate one original/fibrotic pair");
    pair->add_option("--ckpt", ckpt)->required();
    pair->add_option("--classifier", model_path)->required();
    pair->add_option("--manifest", manifest_path)->required();
    pair->add_option("--slice", slice_id)->required();
    pair->add_option("--alpha", mcfg.alpha);
    pair->add_option("--out", out_dir)->required();

    // maskgen
    auto* mg_cmd = app.add_subcommand("maskgen", "Pseudo masks from pairs");
    mg_cmd->require_subcommand(1);
    auto* mg_run = mg_cmd->add_subcommand("run", "Refine every pair under a directory");
    std::string pairs_dir;
    std::string lungs_dir;
    maskgen::RefineConfig rcfg;
    bool raw = false;
    mg_run->add_option("--pairs", pairs_dir, "Directory of <id>_orig.png / <id>_fib.png")->required();
    mg_run->add_option("--lungs", lungs_dir, "Directory of <id>.png lung masks")->required();
    mg_run->add_option("--out", out_dir)->required();
    mg_run->add_option("--sigma", rcfg.sigma);
    mg_run->add_option("--open-radius", rcfg.open_radius);
    mg_run->add_option("--keep", rcfg.keep);
    mg_run->add_option("--min-elongation", rcfg.vessel.min_elongation);
    mg_run->add_option("--max-width", rcfg.vessel.max_minor_extent);
    mg_run->add_flag("--raw-otsu", raw, "Skip refinement: Otsu on the raw difference only");

    // segnet
    auto* seg_cmd = app.add_subcommand("segnet", "U-Net segmentation");
    seg_cmd->require_subcommand(1);
    auto* seg_train = seg_cmd->add_subcommand("train", "Cross-validated training on pseudo pairs");
    segnet::SegTrainConfig scfg;
    std::string masks_dir;
    seg_train->add_option("--pairs", pairs_dir)->required();
    seg_train->add_option("--masks", masks_dir)->required();
    seg_train->add_option("--out", out_dir)->required();
    seg_train->add_option("--folds", scfg.folds);
    seg_train->add_option("--steps", scfg.steps);
    seg_train->add_option("--seed", scfg.seed);
    auto* seg_eval = seg_cmd->add_subcommand("eval", "Dice against ground truth on the test split");
    std::string models_dir;
    seg_eval->add_option("--models", models_dir)->required();
    seg_eval->add_option("--test", manifest_path, "Dataset directory or manifest")->required();
    seg_eval->add_option("--out", out_dir);

    // pipeline
    auto* run_cmd = app.add_subcommand("run", "Run every stage");
    std::string config_path;
    std::string root = "runs";
    bool force = false;
    bool smoke = false;
    run_cmd->add_option("--config", config_path, "JSON config; defaults apply to missing keys");
    run_cmd->add_option("--root", root, "Cache and run directory root")->capture_default_str();
    run_cmd->add_flag("--force", force, "Recompute cached stages");
    run_cmd->add_flag("--smoke", smoke, "Reduced configuration (ignored with --config)");
    auto* report_cmd = app.add_subcommand("report", "Write report.md for a finished run");
    std::string run_id;
    report_cmd->add_option("--run", run_id, "Run id or directory")->required();
    report_cmd->add_option("--root", root, "Cache and run directory root")->capture_default_str();
    auto* config_cmd = app.add_subcommand("config", "Print a configuration");
    config_cmd->add_flag("--smoke", smoke);

    CLI11_PARSE(app, argc, argv);
    log::set_stderr_enabled(!quiet);
    std::unique_ptr<log::FileSink> sink;
    if (!log_file.empty()) {
        sink = std::make_unique<log::FileSink>(log_file);
    }

    try {
        if (gen->parsed()) {
            if (count > 0) {
                gcfg.positives = count / 2;
                gcfg.negatives = count - count / 2;
            }
            const auto m = build_dataset(gcfg, gen_out);
            print({{"slices", m.entries.size()}, {"out", gen_out}});
        } else if (dae_train->parsed()) {
            const auto m = load_manifest(manifest_path);
            dcfg.image_size = m.size;
            const auto train = images_of(m, m.select(Split::train));
            const auto val = images_of(m, m.select(Split::val));
            diffae::DiffAE model(dcfg, derive_seed(tcfg.seed, "init"));
            const auto r = diffae::train_diffae(model, train, val, tcfg, nullptr, [](const diffae::LossRecord& rec) {
                log::info("diffae", "progress",
                          {{"step", rec.step}, {"train_loss", rec.train_loss}, {"val_loss", rec.val_loss}});
            });
            diffae::save_diffae(ckpt_out, model);
            print({{"best_val_loss", r.best_val_loss}, {"best_step", r.best_step}, {"out", ckpt_out}});
        } else if (dae_rec->parsed()) {
            const auto model = diffae::load_diffae(ckpt);
            const auto m = load_manifest(manifest_path);
            const Slice s = load_slice(m, m.find(slice_id));
            const Image rec = model.reconstruct(s.pixels);
            if (!rec_out.empty()) {
                io::write_image_png16(rec_out, rec);
            }
            print({{"slice", slice_id}, {"psnr", diffae::psnr(s.pixels, rec)}});
        } else if (cls_encode->parsed()) {
            const auto model = diffae::load_diffae(ckpt);
            const auto m = load_manifest(manifest_path);
            const auto es = pool(m, {Split::train, Split::val});
            const auto feats = manipulate::encoder_features(model)(images_of(m, es));
            std::vector<classifier::LabeledLatent> latents;
            for (std::size_t i = 0; i < es.size(); ++i) {
                latents.push_back({es[i]->id, feats[i], es[i]->label == Label::fibrosis_positive});
            }
            classifier::save_latents(latents_path, latents);
            print({{"latents", latents.size()}, {"out", latents_path}});
        } else if (cls_train->parsed()) {
            const auto latents = classifier::load_latents(latents_path);
            const auto model = classifier::train_classifier(latents, ccfg);
            classifier::save_model(model_path, model);
            print({{"val_f1", model.f1}, {"best_epoch", model.best_epoch}, {"out", model_path}});
        } else if (cls_eval->parsed()) {
            const auto model = classifier::load_model(model_path);
            const auto latents = classifier::load_latents(latents_path);
            const auto c = classifier::confusion(latents, model);
            print({{"f1", classifier::f1_score(c)}, {"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}});
        } else if (sweep->parsed()) {
            const auto model = diffae::load_diffae(ckpt);
            const auto cm = classifier::load_model(model_path);
            const auto m = load_manifest(manifest_path);
            std::vector<Slice> negatives;
            for (const auto* e : m.select(Split::val, Label::fibrosis_negative)) {
                if (static_cast<int>(negatives.size()) < sweep_negatives) {
                    negatives.push_back(load_slice(m, *e));
                }
            }
            std::vector<Slice> real;
            for (const auto* e : pool(m, {Split::train, Split::val})) {
                if (e->label == Label::fibrosis_positive) {
                    real.push_back(load_slice(m, *e));
                }
            }
            const auto r = manipulate::select_alpha(alphas, negatives, real, model, cm, mcfg);
            manipulate::write_sweep(out_dir, r);
            print({{"alpha_star", r.alpha_star}, {"out", out_dir}});
        } else if (pair->parsed()) {
            const auto model = diffae::load_diffae(ckpt);
            const auto cm = classifier::load_model(model_path);
            const auto m = load_manifest(manifest_path);
            const auto p = manipulate::generate_pair(load_slice(m, m.find(slice_id)), mcfg.alpha, model, cm, mcfg);
            io::ensure_dir(out_dir);
            io::write_image_png16(fs::path(out_dir) / (slice_id + "_orig.png"), p.original);
            io::write_image_png16(fs::path(out_dir) / (slice_id + "_fib.png"), p.fibrotic);
            print({{"slice", slice_id}, {"alpha", mcfg.alpha}, {"out", out_dir}});
        } else if (mg_run->parsed()) {
            std::vector<std::string> ids;
            for (const auto& e : fs::directory_iterator(pairs_dir)) {
                const std::string name = e.path().filename().string();
                if (name.ends_with("_orig.png")) {
                    ids.push_back(name.substr(0, name.size() - 9));
                }
            }
            std::sort(ids.begin(), ids.end());
            for (const auto& id : ids) {
                const Image a = io::read_image_png16(fs::path(pairs_dir) / (id + "_orig.png"));
                const Image b = io::read_image_png16(fs::path(pairs_dir) / (id + "_fib.png"));
                const auto diff = maskgen::difference_map(a, b);
                maskgen::PseudoMask pm;
                if (raw) {
                    pm.source_slice_id = id;
                    pm.mask = maskgen::raw_otsu(diff);
                } else {
                    pm = maskgen::refine(diff, io::read_mask_png8(fs::path(lungs_dir) / (id + ".png")), rcfg, id);
                }
                maskgen::write_pseudo_mask(out_dir, pm, rcfg);
            }
            print({{"masks", ids.size()}, {"out", out_dir}});
        } else if (seg_train->parsed()) {
            std::vector<segnet::TrainingPair> pairs;
            for (const auto& e : fs::directory_iterator(pairs_dir)) {
                const std::string name = e.path().filename().string();
                if (name.ends_with("_fib.png")) {
                    const std::string id = name.substr(0, name.size() - 8);
                    pairs.push_back({id, io::read_image_png16(e.path()), maskgen::read_pseudo_mask(masks_dir, id).mask});
                }
            }
            std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
            if (!pairs.empty()) {
                scfg.net.image_size = pairs.front().image.height();
            }
            const auto outcome = segnet::train_unet(pairs, scfg);
            io::ensure_dir(out_dir);
            nlohmann::json folds = nlohmann::json::array();
            for (const auto& mdl : outcome.models) {
                segnet::save_model(fs::path(out_dir) / ("fold" + std::to_string(mdl.fold) + ".ckpt"), mdl);
                folds.push_back({{"fold", mdl.fold}, {"val_dice", mdl.val_dice}});
            }
            print({{"folds", folds}, {"internal_test_dice", outcome.internal_test_dice}, {"out", out_dir}});
        } else if (seg_eval->parsed()) {
            std::vector<segnet::SegModel> models;
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(models_dir)) {
                if (e.path().extension() == ".ckpt") {
                    files.push_back(e.path());
                }
            }
            std::sort(files.begin(), files.end());
            for (const auto& f : files) {
                models.push_back(segnet::load_model(f));
            }
            const auto m = load_manifest(manifest_path);
            std::vector<Slice> test;
            for (const auto* e : m.select(Split::test, Label::fibrosis_positive)) {
                Slice s = load_slice(m, *e);
                s.gt_mask = load_ground_truth(m, *e);
                test.push_back(std::move(s));
            }
            const auto r = segnet::evaluate(models, test);
            if (!out_dir.empty()) {
                segnet::write_report(out_dir, r);
            }
            print({{"n", r.n}, {"mean", r.mean}, {"median", r.median}, {"q25", r.q25}, {"q75", r.q75}});
        } else if (run_cmd->parsed()) {
            const auto config = !config_path.empty() ? pipeline::load_config(config_path)
                                : smoke                ? pipeline::smoke_config()
                                                       : pipeline::default_config();
            const auto manifest = pipeline::run_all(config, {root, force});
            pipeline::report(manifest);
            print({{"run_id", manifest.run_id}, {"run_dir", manifest.run_dir}});
        } else if (report_cmd->parsed()) {
            const auto manifest = pipeline::load_run(pipeline::resolve_run(root, run_id));
            std::cout << pipeline::report(manifest);
        } else if (config_cmd->parsed()) {
            print((smoke ? pipeline::smoke_config() : pipeline::default_config()).to_json());
        }
    } catch (const StageError& e) {
        log::event(log::Level::error, e.stage(), e.what());
        return 2;
    } catch (const std::exception& e) {
        log::event(log::Level::error, "cli", e.what());
        return 1;
    }
    return 0;
}
